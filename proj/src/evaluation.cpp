#include "ercforge/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "ercforge/context.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

using nlohmann::ordered_json;

namespace {

std::string normalize_raw(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    for (char c : raw) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u))
            out.push_back(static_cast<char>(std::tolower(u)));
        else
            out.push_back(' ');
    }
    return collapse_whitespace(trim(out));
}

}  // namespace

std::string parse_label(const std::string& raw, const LabelSpace& space) {
    const std::string norm = normalize_raw(raw);
    if (norm.empty()) return kUnknownLabel;

    if (space.contains(norm)) return norm;

    // Unique-prefix match: the whole normalized output is a prefix of exactly
    // one label.
    std::string prefix_hit;
    int prefix_hits = 0;
    for (const auto& label : space.labels) {
        if (starts_with(label, norm)) {
            prefix_hit = label;
            ++prefix_hits;
        }
    }
    if (prefix_hits == 1) return prefix_hit;

    // Whole-word containment, scanned in label-space order.
    const auto words = split_whitespace(norm);
    for (const auto& label : space.labels)
        if (std::find(words.begin(), words.end(), label) != words.end()) return label;

    return kUnknownLabel;
}

namespace {

struct Tally {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t support = 0;
};

ClassScores scores_from_tally(const Tally& t) {
    ClassScores s;
    s.support = t.support;
    const double tp = static_cast<double>(t.tp);
    s.precision = (t.tp + t.fp) ? tp / static_cast<double>(t.tp + t.fp) : 0.0;
    s.recall = (t.tp + t.fn) ? tp / static_cast<double>(t.tp + t.fn) : 0.0;
    s.f1 = (s.precision + s.recall > 0) ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                        : 0.0;
    return s;
}

}  // namespace

EvalReport evaluate_predictions(const PredictionSet& preds) {
    if (preds.items.empty()) throw DataError("cannot evaluate an empty prediction set");

    const auto& labels = preds.label_space.labels;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = i;

    // Per-item tallies drive the scores; the confusion matrix is assembled
    // independently for the report.
    std::map<std::string, Tally> tallies;
    for (const auto& l : labels) tallies[l] = {};
    std::vector<std::vector<std::size_t>> confusion(
        labels.size(), std::vector<std::size_t>(labels.size() + 1, 0));
    std::size_t unknown_count = 0;

    for (const auto& item : preds.items) {
        auto g = index.find(item.gold);
        if (g == index.end())
            throw DataError("gold label '" + item.gold + "' is outside the label space");
        tallies[item.gold].support++;
        if (item.parsed == item.gold) {
            tallies[item.gold].tp++;
        } else {
            tallies[item.gold].fn++;
            if (index.count(item.parsed)) tallies[item.parsed].fp++;
        }
        if (item.parsed == kUnknownLabel) {
            ++unknown_count;
            confusion[g->second][labels.size()]++;
        } else {
            auto p = index.find(item.parsed);
            if (p == index.end())
                throw DataError("parsed label '" + item.parsed +
                                "' is neither in the label space nor 'unknown'");
            confusion[g->second][p->second]++;
        }
    }

    EvalReport report;
    report.corpus_id = preds.corpus_id;
    report.label_space = preds.label_space;
    report.confusion = std::move(confusion);
    report.unknown_rate =
        static_cast<double>(unknown_count) / static_cast<double>(preds.items.size());

    double weighted_sum = 0.0;
    std::size_t total_support = 0;
    for (const auto& l : labels) {
        ClassScores s = scores_from_tally(tallies[l]);
        weighted_sum += static_cast<double>(s.support) * s.f1;
        total_support += s.support;
        report.per_class[l] = s;
    }
    report.weighted_f1 = total_support ? weighted_sum / static_cast<double>(total_support) : 0.0;
    report.seeds = {preds.seed};
    report.seed_scores = {report.weighted_f1};
    report.mean = report.weighted_f1;
    report.stddev = 0.0;
    return report;
}

double weighted_f1(const PredictionSet& preds) {
    return evaluate_predictions(preds).weighted_f1;
}

PredictionSet predict_labels(const Corpus& corpus_test, const ModelHandle& handle,
                             Backend& backend, const TemplateRegistry& registry,
                             const TrainingConfig& config, AblationMode mode,
                             const CharacteristicStore* store, int parallelism) {
    config.validate();
    if (corpus_test.conversations.empty()) throw DataError("empty corpus");
    if (mode == AblationMode::wM && store == nullptr)
        throw DataError("mode wM needs a characteristic store at inference");

    struct Task {
        const Conversation* conversation;
        int target_index;
    };
    std::vector<Task> tasks;
    for (const auto& conv : corpus_test.conversations)
        for (const auto& u : conv.utterances) tasks.push_back({&conv, u.index});

    PredictionSet preds;
    preds.items.resize(tasks.size());
    preds.lineage = handle.stage_lineage;
    preds.corpus_id = corpus_test.dataset_id + "/" + corpus_test.split;
    preds.label_space = corpus_test.label_space;

    const auto counter = [&backend](const std::string& s) { return backend.count_tokens(s); };
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const Task& task = tasks[i];
            const Utterance& target =
                task.conversation->utterances[static_cast<std::size_t>(task.target_index)];
            PredictionItem item;
            item.conversation_id = task.conversation->conversation_id;
            item.target_index = task.target_index;
            item.gold = target.label;
            try {
                DialogueWindow window =
                    build_window(*task.conversation, task.target_index, config.window_size);
                std::optional<std::vector<std::string>> characteristics;
                if (mode == AblationMode::wM) {
                    CharacteristicKey key{window.conversation_id, task.target_index,
                                          to_string(config.key_element), config.template_variant,
                                          backend.id()};
                    auto record = store->find(key);
                    if (!record)
                        throw DataError("characteristic store is missing " +
                                        window.conversation_id + "[" +
                                        std::to_string(task.target_index) + "]");
                    characteristics = std::vector<std::string>{record->text};
                }
                InstructionExample prompt = registry.render_recognition_example(
                    window, corpus_test.label_space, characteristics, std::nullopt);
                GenerationRequest request;
                request.prompt =
                    truncate_to_budget(prompt.input_text, config.input_budget, counter);
                request.max_new_tokens = 8;
                request.temperature = 0.0;
                GenerationResult result = backend.generate(handle, request);
                item.raw_output = result.text;
                if (result.finish_reason == FinishReason::Error) {
                    item.parsed = kUnknownLabel;
                    item.note = "backend reported a generation error";
                } else {
                    item.parsed = parse_label(result.text, corpus_test.label_space);
                }
            } catch (const std::exception& e) {
                item.parsed = kUnknownLabel;
                item.note = e.what();
            }
            preds.items[i] = std::move(item);
        }
    };

    const int n_threads =
        std::max(1, std::min<int>(parallelism, static_cast<int>(tasks.size())));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    return preds;
}

EvalReport aggregate_runs(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw DataError("no reports to aggregate");
    const auto& first = reports.front();
    for (const auto& r : reports) {
        if (r.corpus_id != first.corpus_id)
            throw DataError("cannot aggregate reports over different corpora: '" + r.corpus_id +
                            "' vs '" + first.corpus_id + "'");
        if (r.label_space.labels != first.label_space.labels)
            throw DataError("cannot aggregate reports over different label spaces");
    }

    EvalReport out;
    out.corpus_id = first.corpus_id;
    out.label_space = first.label_space;
    for (const auto& r : reports) {
        out.seed_scores.push_back(r.weighted_f1);
        for (auto seed : r.seeds) out.seeds.push_back(seed);
        out.unknown_rate += r.unknown_rate;
    }
    out.unknown_rate /= static_cast<double>(reports.size());

    double sum = 0.0;
    for (double s : out.seed_scores) sum += s;
    out.mean = sum / static_cast<double>(out.seed_scores.size());
    double var = 0.0;
    if (out.seed_scores.size() > 1) {
        for (double s : out.seed_scores) var += (s - out.mean) * (s - out.mean);
        var /= static_cast<double>(out.seed_scores.size() - 1);
    }
    out.stddev = std::sqrt(var);
    out.weighted_f1 = out.mean;

    // Per-class means over runs.
    for (const auto& label : first.label_space.labels) {
        ClassScores mean_scores;
        for (const auto& r : reports) {
            auto it = r.per_class.find(label);
            if (it == r.per_class.end()) continue;
            mean_scores.precision += it->second.precision;
            mean_scores.recall += it->second.recall;
            mean_scores.f1 += it->second.f1;
            mean_scores.support += it->second.support;
        }
        const double n = static_cast<double>(reports.size());
        mean_scores.precision /= n;
        mean_scores.recall /= n;
        mean_scores.f1 /= n;
        mean_scores.support /= reports.size();
        out.per_class[label] = mean_scores;
    }
    return out;
}

double paired_significance_scores(const std::vector<double>& scores_a,
                                  const std::vector<double>& scores_b) {
    if (scores_a.size() != scores_b.size())
        throw DataError("paired test needs matched runs (" + std::to_string(scores_a.size()) +
                        " vs " + std::to_string(scores_b.size()) + ")");
    const std::size_t n = scores_a.size();
    if (n < 2) throw DataError("paired test needs at least 2 pairs");

    std::vector<double> diffs(n);
    for (std::size_t i = 0; i < n; ++i) diffs[i] = scores_a[i] - scores_b[i];
    double mean = 0.0;
    for (double d : diffs) mean += d;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double d : diffs) var += (d - mean) * (d - mean);
    var /= static_cast<double>(n - 1);

    if (var == 0.0) return mean == 0.0 ? 1.0 : 0.0;

    const double t = mean / std::sqrt(var / static_cast<double>(n));
    boost::math::students_t dist(static_cast<double>(n - 1));
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

double paired_significance(const std::vector<PredictionSet>& runs_a,
                           const std::vector<PredictionSet>& runs_b) {
    std::vector<double> a;
    std::vector<double> b;
    a.reserve(runs_a.size());
    b.reserve(runs_b.size());
    for (const auto& r : runs_a) a.push_back(weighted_f1(r));
    for (const auto& r : runs_b) b.push_back(weighted_f1(r));
    return paired_significance_scores(a, b);
}

std::map<std::string, double> robustness_summary(
    const std::map<std::string, double>& single_scores,
    const std::map<std::pair<std::string, std::string>, double>& mixed_scores,
    const std::vector<std::string>& ratios) {
    if (ratios.empty()) throw DataError("robustness summary needs at least one ratio");
    std::map<std::string, double> gaps;
    for (const auto& [dataset, single] : single_scores) {
        double sum = 0.0;
        for (const auto& ratio : ratios) {
            auto it = mixed_scores.find({dataset, ratio});
            if (it == mixed_scores.end())
                throw DataError("missing mixed score for (" + dataset + ", " + ratio + ")");
            sum += single - it->second;
        }
        gaps[dataset] = sum / static_cast<double>(ratios.size());
    }
    return gaps;
}

std::string PredictionSet::to_json() const {
    ordered_json j;
    j["corpus_id"] = corpus_id;
    j["label_space"] = label_space.labels;
    j["seed"] = seed;
    ordered_json lineage_json = ordered_json::array();
    for (const auto& s : lineage) {
        ordered_json js;
        js["stage"] = s.stage;
        js["task"] = s.task;
        js["dataset_digest"] = s.dataset_digest;
        js["seed"] = s.seed;
        lineage_json.push_back(std::move(js));
    }
    j["lineage"] = std::move(lineage_json);
    ordered_json items_json = ordered_json::array();
    for (const auto& item : items) {
        ordered_json ji;
        ji["conversation_id"] = item.conversation_id;
        ji["target_index"] = item.target_index;
        ji["gold"] = item.gold;
        ji["raw_output"] = item.raw_output;
        ji["parsed"] = item.parsed;
        if (!item.note.empty()) ji["note"] = item.note;
        items_json.push_back(std::move(ji));
    }
    j["items"] = std::move(items_json);
    return j.dump(2) + "\n";
}

PredictionSet PredictionSet::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("bad prediction set JSON: ") + e.what());
    }
    PredictionSet p;
    p.corpus_id = j.at("corpus_id").get<std::string>();
    p.label_space = LabelSpace::make(j.at("label_space").get<std::vector<std::string>>());
    p.seed = j.value("seed", 0ull);
    if (j.contains("lineage")) {
        for (const auto& js : j["lineage"]) {
            StageDescriptor s;
            s.stage = js.at("stage").get<int>();
            s.task = js.value("task", std::string());
            s.dataset_digest = js.value("dataset_digest", std::string());
            s.seed = js.value("seed", 0ull);
            p.lineage.push_back(std::move(s));
        }
    }
    for (const auto& ji : j.at("items")) {
        PredictionItem item;
        item.conversation_id = ji.at("conversation_id").get<std::string>();
        item.target_index = ji.at("target_index").get<int>();
        item.gold = ji.at("gold").get<std::string>();
        item.raw_output = ji.value("raw_output", std::string());
        item.parsed = ji.at("parsed").get<std::string>();
        item.note = ji.value("note", std::string());
        p.items.push_back(std::move(item));
    }
    return p;
}

std::string EvalReport::to_json() const {
    ordered_json j;
    j["corpus_id"] = corpus_id;
    j["label_space"] = label_space.labels;
    j["weighted_f1"] = weighted_f1;
    ordered_json per_class_json;
    for (const auto& [label, s] : per_class) {
        ordered_json js;
        js["precision"] = s.precision;
        js["recall"] = s.recall;
        js["f1"] = s.f1;
        js["support"] = s.support;
        per_class_json[label] = std::move(js);
    }
    j["per_class"] = std::move(per_class_json);
    j["confusion"] = confusion;
    j["unknown_rate"] = unknown_rate;
    j["seeds"] = seeds;
    j["seed_scores"] = seed_scores;
    j["mean"] = mean;
    j["stddev"] = stddev;
    ordered_json sig = ordered_json::array();
    for (const auto& s : significance) {
        ordered_json js;
        js["baseline"] = s.baseline_id;
        js["p_value"] = s.p_value;
        sig.push_back(std::move(js));
    }
    j["significance"] = std::move(sig);
    return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("bad eval report JSON: ") + e.what());
    }
    EvalReport r;
    r.corpus_id = j.at("corpus_id").get<std::string>();
    r.label_space = LabelSpace::make(j.at("label_space").get<std::vector<std::string>>());
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    if (j.contains("per_class"))
        for (const auto& [label, js] : j["per_class"].items())
            r.per_class[label] = ClassScores{js.at("precision").get<double>(),
                                             js.at("recall").get<double>(),
                                             js.at("f1").get<double>(),
                                             js.at("support").get<std::size_t>()};
    if (j.contains("confusion"))
        r.confusion = j["confusion"].get<std::vector<std::vector<std::size_t>>>();
    r.unknown_rate = j.value("unknown_rate", 0.0);
    if (j.contains("seeds")) r.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("seed_scores")) r.seed_scores = j["seed_scores"].get<std::vector<double>>();
    r.mean = j.value("mean", r.weighted_f1);
    r.stddev = j.value("stddev", 0.0);
    if (j.contains("significance"))
        for (const auto& js : j["significance"])
            r.significance.push_back(
                {js.at("baseline").get<std::string>(), js.at("p_value").get<double>()});
    return r;
}

}  // namespace ercforge

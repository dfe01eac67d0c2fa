#include "ercforge/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ercforge/errors.hpp"
#include "ercforge/io.hpp"
#include "ercforge/rng.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

using nlohmann::ordered_json;

bool LabelSpace::contains(const std::string& label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::string LabelSpace::joined() const {
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) out += ", ";
        out += labels[i];
    }
    return out;
}

LabelSpace LabelSpace::make(std::vector<std::string> labels) {
    if (labels.size() < 2) throw DataError("label space needs at least 2 labels");
    std::set<std::string> seen;
    for (auto& l : labels) {
        l = lower(trim(l));
        if (l.empty()) throw DataError("label space contains an empty label");
        if (!seen.insert(l).second) throw DataError("duplicate label in label space: " + l);
    }
    return LabelSpace{std::move(labels)};
}

std::size_t Corpus::utterance_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.utterances.size();
    return n;
}

const LabelSpace* builtin_label_space(const std::string& dataset_id) {
    static const LabelSpace iemocap =
        LabelSpace::make({"neutral", "happy", "sad", "excited", "angry", "frustrated"});
    static const LabelSpace meld =
        LabelSpace::make({"anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"});
    static const LabelSpace emorynlp =
        LabelSpace::make({"neutral", "joyful", "peaceful", "powerful", "scared", "mad", "sad"});
    if (dataset_id == "iemocap") return &iemocap;
    if (dataset_id == "meld") return &meld;
    if (dataset_id == "emorynlp") return &emorynlp;
    return nullptr;
}

namespace {

std::string namespaced_id(const std::string& dataset_id, const std::string& raw_id) {
    if (starts_with(raw_id, dataset_id + "/")) return raw_id;
    return dataset_id + "/" + raw_id;
}

Conversation parse_conversation(const ordered_json& j, const std::string& dataset_id,
                                const std::string& split, std::size_t line_no) {
    auto fail = [&](const std::string& what) -> DataError {
        return DataError("line " + std::to_string(line_no) + ": " + what);
    };
    if (!j.is_object()) throw fail("record is not a JSON object");
    if (!j.contains("conversation_id") || !j["conversation_id"].is_string())
        throw fail("missing conversation_id");
    if (!j.contains("utterances") || !j["utterances"].is_array())
        throw fail("missing utterances array");
    if (j.contains("dataset") && j["dataset"].get<std::string>() != dataset_id)
        throw fail("record dataset '" + j["dataset"].get<std::string>() +
                   "' does not match requested dataset '" + dataset_id + "'");
    if (j.contains("split") && j["split"].get<std::string>() != split)
        throw fail("record split '" + j["split"].get<std::string>() +
                   "' does not match requested split '" + split + "'");

    Conversation conv;
    conv.conversation_id = namespaced_id(dataset_id, j["conversation_id"].get<std::string>());
    if (j["utterances"].empty())
        throw fail("empty conversation: " + conv.conversation_id);

    // Canonical speaker names are assigned by first appearance.
    std::map<std::string, int> speaker_ids;
    int next_index = 0;
    for (const auto& ju : j["utterances"]) {
        if (!ju.is_object() || !ju.contains("speaker") || !ju.contains("text") ||
            !ju.contains("label"))
            throw fail("malformed utterance in " + conv.conversation_id);
        Utterance u;
        int declared = ju.contains("index") ? ju["index"].get<int>() : next_index;
        if (declared != next_index)
            throw fail("non-contiguous utterance index " + std::to_string(declared) + " in " +
                       conv.conversation_id);
        u.index = next_index++;
        const std::string original = ju["speaker"].get<std::string>();
        auto it = speaker_ids.find(original);
        if (it == speaker_ids.end())
            it = speaker_ids.emplace(original, static_cast<int>(speaker_ids.size())).first;
        u.speaker = "Speaker" + std::to_string(it->second);
        u.text = ju["text"].get<std::string>();
        if (trim(u.text).empty())
            throw fail("empty utterance text at " + conv.conversation_id + "[" +
                       std::to_string(u.index) + "]");
        u.label = lower(trim(ju["label"].get<std::string>()));
        conv.utterances.push_back(std::move(u));
    }
    return conv;
}

std::optional<LabelSpace> load_labels_sidecar(const std::filesystem::path& path) {
    std::filesystem::path sidecar = path;
    sidecar += ".labels.json";
    if (!std::filesystem::exists(sidecar)) return std::nullopt;
    auto j = ordered_json::parse(slurp_file(sidecar));
    std::vector<std::string> labels;
    for (const auto& l : j.at("labels")) labels.push_back(l.get<std::string>());
    return LabelSpace::make(std::move(labels));
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, const std::string& dataset_id,
                   const std::string& split, std::optional<LabelSpace> label_space) {
    if (split != "train" && split != "dev" && split != "test")
        throw DataError("unknown split: " + split);
    if (!std::filesystem::exists(path))
        throw DataError("corpus file not found: " + path.string());

    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file: " + path.string());

    Corpus corpus;
    corpus.dataset_id = dataset_id;
    corpus.split = split;

    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> seen_labels;  // first-appearance order, for derived spaces
    std::set<std::string> seen_label_set;
    std::set<std::string> conversation_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        Conversation conv = parse_conversation(j, dataset_id, split, line_no);
        if (!conversation_ids.insert(conv.conversation_id).second)
            throw DataError("line " + std::to_string(line_no) +
                            ": duplicate conversation_id " + conv.conversation_id);
        for (const auto& u : conv.utterances) {
            if (seen_label_set.insert(u.label).second) seen_labels.push_back(u.label);
        }
        corpus.conversations.push_back(std::move(conv));
    }
    if (corpus.conversations.empty())
        throw DataError("corpus file has no conversations: " + path.string());

    if (label_space) {
        corpus.label_space = std::move(*label_space);
    } else if (auto sidecar = load_labels_sidecar(path)) {
        corpus.label_space = std::move(*sidecar);
    } else if (const LabelSpace* builtin = builtin_label_space(dataset_id)) {
        corpus.label_space = *builtin;
    } else {
        corpus.label_space = LabelSpace::make(seen_labels);
    }

    for (const auto& conv : corpus.conversations)
        for (const auto& u : conv.utterances)
            if (!corpus.label_space.contains(u.label))
                throw DataError("label '" + u.label + "' at " + conv.conversation_id + "[" +
                                std::to_string(u.index) + "] is outside the label space {" +
                                corpus.label_space.joined() + "}");
    return corpus;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
    std::string out;
    for (const auto& conv : corpus.conversations) {
        ordered_json j;
        j["conversation_id"] = conv.conversation_id;
        j["dataset"] = corpus.dataset_id;
        j["split"] = corpus.split;
        ordered_json utts = ordered_json::array();
        for (const auto& u : conv.utterances) {
            ordered_json ju;
            ju["index"] = u.index;
            ju["speaker"] = u.speaker;
            ju["text"] = u.text;
            ju["label"] = u.label;
            utts.push_back(std::move(ju));
        }
        j["utterances"] = std::move(utts);
        out += j.dump();
        out += "\n";
    }
    return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    write_file(path, corpus_to_jsonl(corpus));
    ordered_json meta;
    meta["dataset"] = corpus.dataset_id;
    meta["split"] = corpus.split;
    meta["labels"] = corpus.label_space.labels;
    std::filesystem::path sidecar = path;
    sidecar += ".labels.json";
    write_file(sidecar, meta.dump(2) + "\n");
}

ValidationReport validate_corpus(const Corpus& corpus) {
    ValidationReport report;
    report.conversation_count = corpus.conversations.size();
    std::set<std::string> ids;
    for (const auto& conv : corpus.conversations) {
        if (!ids.insert(conv.conversation_id).second)
            report.violations.push_back(
                {conv.conversation_id, -1, "duplicate conversation_id"});
        if (conv.utterances.empty())
            report.violations.push_back({conv.conversation_id, -1, "empty conversation"});
        std::set<std::string> speakers;
        for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
            const Utterance& u = conv.utterances[i];
            ++report.utterance_count;
            report.label_histogram[u.label]++;
            if (u.index != static_cast<int>(i))
                report.violations.push_back(
                    {conv.conversation_id, u.index,
                     "utterance index " + std::to_string(u.index) + " at position " +
                         std::to_string(i)});
            if (trim(u.text).empty())
                report.violations.push_back({conv.conversation_id, u.index, "empty text"});
            if (!corpus.label_space.contains(u.label))
                report.violations.push_back(
                    {conv.conversation_id, u.index, "label '" + u.label + "' outside label space"});
            speakers.insert(u.speaker);
        }
        if (!conv.utterances.empty() && speakers.empty())
            report.violations.push_back({conv.conversation_id, -1, "no speakers"});
    }
    if (corpus.conversations.empty())
        report.violations.push_back({"", -1, "corpus has no conversations"});
    return report;
}

std::optional<std::string> UnifiedLabelMap::lookup(const std::string& dataset,
                                                   const std::string& source_label) const {
    for (const auto& row : rows)
        if (row.dataset == dataset && row.source_label == source_label) return row.unified_label;
    return std::nullopt;
}

UnifiedLabelMap UnifiedLabelMap::load_csv(const std::filesystem::path& path) {
    std::string content = slurp_file(path);
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty label map file: " + path.string());
    if (trim(line) != "dataset,source_label,unified_label")
        throw DataError("label map header must be 'dataset,source_label,unified_label'");

    UnifiedLabelMap map;
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<std::string> unified_order;
    std::set<std::string> unified_seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != 3)
            throw DataError("label map line " + std::to_string(line_no) + ": expected 3 fields");
        Row row{lower(trim(fields[0])), lower(trim(fields[1])), lower(trim(fields[2]))};
        if (row.dataset.empty() || row.source_label.empty() || row.unified_label.empty())
            throw DataError("label map line " + std::to_string(line_no) + ": empty field");
        if (!seen.insert({row.dataset, row.source_label}).second)
            throw DataError("label map line " + std::to_string(line_no) + ": duplicate mapping for (" +
                            row.dataset + ", " + row.source_label + ")");
        if (unified_seen.insert(row.unified_label).second)
            unified_order.push_back(row.unified_label);
        map.rows.push_back(std::move(row));
    }
    if (map.rows.empty()) throw DataError("label map has no rows: " + path.string());
    map.unified_space = LabelSpace::make(unified_order);
    return map;
}

Corpus unify_labels(const Corpus& corpus, const UnifiedLabelMap& map) {
    Corpus out = corpus;
    out.label_space = map.unified_space;
    for (auto& conv : out.conversations) {
        for (auto& u : conv.utterances) {
            auto unified = map.lookup(corpus.dataset_id, u.label);
            if (!unified)
                throw DataError("no unified mapping for label '" + u.label + "' of dataset '" +
                                corpus.dataset_id + "'");
            u.label = *unified;
        }
    }
    return out;
}

std::size_t Ratio::ceil_of(std::size_t n) const {
    long long nn = static_cast<long long>(n);
    return static_cast<std::size_t>((num * nn + den - 1) / den);
}

Ratio Ratio::parse(const std::string& text) {
    std::string s = trim(text);
    long long num = 0;
    long long den = 1;
    auto slash = s.find('/');
    auto dot = s.find('.');
    try {
        if (slash != std::string::npos) {
            num = std::stoll(s.substr(0, slash));
            den = std::stoll(s.substr(slash + 1));
        } else if (dot != std::string::npos) {
            std::string whole = s.substr(0, dot);
            std::string frac = s.substr(dot + 1);
            if (frac.size() > 9) frac = frac.substr(0, 9);
            num = (whole.empty() ? 0 : std::stoll(whole));
            for (char c : frac) {
                if (!std::isdigit(static_cast<unsigned char>(c)))
                    throw DataError("bad ratio: " + text);
                num = num * 10 + (c - '0');
                den *= 10;
            }
        } else {
            num = std::stoll(s);
        }
    } catch (const DataError&) {
        throw;
    } catch (const std::exception&) {
        throw DataError("bad ratio: " + text);
    }
    if (den <= 0 || num <= 0 || num > den)
        throw DataError("ratio must lie in (0, 1]: " + text);
    long long g = std::gcd(num, den);
    return Ratio{num / g, den / g};
}

Corpus mix_corpora(const std::vector<Corpus>& corpora, Ratio ratio, std::uint64_t seed) {
    if (corpora.empty()) throw DataError("mix requires at least one corpus");
    if (ratio.num <= 0 || ratio.num > ratio.den)
        throw DataError("ratio must lie in (0, 1]");
    const LabelSpace& space = corpora.front().label_space;
    const std::string& split = corpora.front().split;
    for (const auto& c : corpora) {
        if (c.label_space.labels != space.labels)
            throw DataError("mix requires a common label space; '" + c.dataset_id +
                            "' differs (unify first)");
        if (c.split != split)
            throw DataError("mix requires a common split; '" + c.dataset_id + "' is '" + c.split +
                            "', expected '" + split + "'");
    }

    Rng rng(seed);
    Corpus mixed;
    mixed.dataset_id = "mixed";
    mixed.split = split;
    mixed.label_space = space;
    for (const auto& source : corpora) {
        const std::size_t take = ratio.ceil_of(source.conversations.size());
        auto picked = rng.sample_without_replacement(source.conversations.size(), take);
        std::sort(picked.begin(), picked.end());  // keep source order before the final shuffle
        for (std::size_t idx : picked) mixed.conversations.push_back(source.conversations[idx]);
    }
    rng.shuffle(mixed.conversations);

    std::set<std::string> ids;
    for (const auto& conv : mixed.conversations)
        if (!ids.insert(conv.conversation_id).second)
            throw DataError("duplicate conversation_id across sources: " + conv.conversation_id);
    return mixed;
}

}  // namespace ercforge

// ercforge: conversation-emotion instruction-tuning pipeline CLI.
// Subcommands: ingest, extract, build, train, predict, eval, mix, sweep,
// report, rerun. Every command writes a manifest and can be replayed from it.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <list>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ercforge/backend.hpp"
#include "ercforge/characteristics.hpp"
#include "ercforge/corpus.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/evaluation.hpp"
#include "ercforge/io.hpp"
#include "ercforge/manifest.hpp"
#include "ercforge/pipeline.hpp"
#include "ercforge/prompting.hpp"
#include "ercforge/report.hpp"
#include "ercforge/strings.hpp"

namespace fs = std::filesystem;
using ercforge::BackendError;
using ercforge::DataError;
using ercforge::UsageError;
using nlohmann::ordered_json;

namespace {

std::string opt_str(const ordered_json& opts, const std::string& key,
                    const std::string& fallback = "") {
    if (opts.contains(key) && !opts[key].is_null()) return opts[key].get<std::string>();
    return fallback;
}

std::string require_str(const ordered_json& opts, const std::string& key) {
    if (!opts.contains(key) || opts[key].is_null() || opts[key].get<std::string>().empty())
        throw UsageError("missing required option --" + key);
    return opts[key].get<std::string>();
}

int opt_int(const ordered_json& opts, const std::string& key, int fallback) {
    if (opts.contains(key) && !opts[key].is_null()) return opts[key].get<int>();
    return fallback;
}

double opt_double(const ordered_json& opts, const std::string& key, double fallback) {
    if (opts.contains(key) && !opts[key].is_null()) return opts[key].get<double>();
    return fallback;
}

bool opt_bool(const ordered_json& opts, const std::string& key, bool fallback = false) {
    if (opts.contains(key) && !opts[key].is_null()) return opts[key].get<bool>();
    return fallback;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const auto& part : ercforge::split(text, ','))
        if (!ercforge::trim(part).empty()) seeds.push_back(std::stoull(ercforge::trim(part)));
    if (seeds.empty()) throw UsageError("seed list is empty");
    return seeds;
}

std::string default_templates_dir() {
    if (const char* env = std::getenv("ERCFORGE_TEMPLATES")) return env;
    return "data/templates";
}

// Reads dataset/split declared by the first record of a corpus file.
std::pair<std::string, std::string> peek_corpus_header(const fs::path& path) {
    std::string content = ercforge::slurp_file(path);
    auto nl = content.find('\n');
    std::string first = nl == std::string::npos ? content : content.substr(0, nl);
    ordered_json j;
    try {
        j = ordered_json::parse(first);
    } catch (const std::exception& e) {
        throw DataError("cannot read corpus header of " + path.string() + ": " + e.what());
    }
    if (!j.contains("dataset") || !j.contains("split"))
        throw DataError("corpus records in " + path.string() + " lack dataset/split fields");
    return {j["dataset"].get<std::string>(), j["split"].get<std::string>()};
}

ercforge::Corpus load_corpus_auto(const ordered_json& opts, const std::string& path_key,
                                  const std::string& dataset_key = "dataset",
                                  const std::string& split_key = "split") {
    const fs::path path = require_str(opts, path_key);
    std::string dataset = opt_str(opts, dataset_key);
    std::string split = opt_str(opts, split_key);
    if (dataset.empty() || split.empty()) {
        auto [d, s] = peek_corpus_header(path);
        if (dataset.empty()) dataset = d;
        if (split.empty()) split = s;
    }
    std::optional<ercforge::LabelSpace> space;
    const std::string labels = opt_str(opts, "labels");
    if (!labels.empty()) space = ercforge::LabelSpace::make(ercforge::split(labels, ','));
    return ercforge::load_corpus(path, dataset, split, space);
}

ercforge::TrainingConfig config_from_opts(const ordered_json& opts) {
    ercforge::TrainingConfig config;
    config.learning_rate = opt_double(opts, "lr", config.learning_rate);
    config.batch_size_stage1 = opt_int(opts, "batch1", config.batch_size_stage1);
    config.batch_size_stage2 = opt_int(opts, "batch2", config.batch_size_stage2);
    config.epochs_stage1 = opt_int(opts, "epochs1", config.epochs_stage1);
    config.epochs_stage2 = opt_int(opts, "epochs2", config.epochs_stage2);
    config.window_size = opt_int(opts, "window", config.window_size);
    config.input_budget = opt_int(opts, "budget", config.input_budget);
    if (opts.contains("seeds")) config.seeds = parse_seed_list(opts["seeds"].get<std::string>());
    if (opts.contains("relation"))
        config.key_element = ercforge::parse_key_element(opts["relation"].get<std::string>());
    config.template_variant = opt_int(opts, "template", config.template_variant);
    config.validate();
    return config;
}

ercforge::Manifest start_manifest(const std::string& command, const ordered_json& opts) {
    ercforge::Manifest m;
    m.command = command;
    m.options = opts;
    m.started_at = ercforge::iso8601_now();
    return m;
}

void finish_manifest(ercforge::Manifest& m, const fs::path& path) {
    m.finished_at = ercforge::iso8601_now();
    m.write(path);
}

void stamp_input(ercforge::Manifest& m, const std::string& name, const fs::path& path) {
    m.inputs.push_back({name, path.string(), ercforge::file_digest(path)});
}

void stamp_output(ercforge::Manifest& m, const std::string& name, const fs::path& path) {
    m.outputs.push_back({name, path.string(), ercforge::file_digest(path)});
}

int run_command(const std::string& command, ordered_json opts);

// ---------------------------------------------------------------- ingest --

int cmd_ingest(const ordered_json& opts) {
    auto manifest = start_manifest("ingest", opts);
    const fs::path in = require_str(opts, "in");
    const fs::path out = require_str(opts, "out");
    stamp_input(manifest, "corpus", in);

    ercforge::Corpus corpus = load_corpus_auto(opts, "in");
    const std::string map_path = opt_str(opts, "unify-map");
    if (!map_path.empty()) {
        stamp_input(manifest, "unify-map", map_path);
        corpus = ercforge::unify_labels(corpus, ercforge::UnifiedLabelMap::load_csv(map_path));
    }
    ercforge::ValidationReport report = ercforge::validate_corpus(corpus);
    ercforge::save_corpus(corpus, out);
    stamp_output(manifest, "corpus", out);

    ordered_json jr;
    jr["conversations"] = report.conversation_count;
    jr["utterances"] = report.utterance_count;
    jr["label_histogram"] = report.label_histogram;
    ordered_json violations = ordered_json::array();
    for (const auto& v : report.violations) {
        ordered_json jv;
        jv["conversation_id"] = v.conversation_id;
        jv["utterance_index"] = v.utterance_index;
        jv["message"] = v.message;
        violations.push_back(std::move(jv));
    }
    jr["violations"] = std::move(violations);
    const fs::path report_path =
        opt_str(opts, "report").empty() ? fs::path(out.string() + ".report.json")
                                        : fs::path(opt_str(opts, "report"));
    ercforge::write_file(report_path, jr.dump(2) + "\n");
    stamp_output(manifest, "report", report_path);
    finish_manifest(manifest, out.string() + ".manifest.json");

    std::cout << "ingested " << report.conversation_count << " conversations, "
              << report.utterance_count << " utterances, " << report.violations.size()
              << " violations\n";
    return report.violations.empty() ? 0 : 3;
}

// --------------------------------------------------------------- extract --

int cmd_extract(const ordered_json& opts) {
    auto manifest = start_manifest("extract", opts);
    const fs::path corpus_path = require_str(opts, "corpus");
    const fs::path store_path = require_str(opts, "store");
    stamp_input(manifest, "corpus", corpus_path);

    ercforge::Corpus corpus = load_corpus_auto(opts, "corpus");
    auto registry =
        ercforge::TemplateRegistry::load(opt_str(opts, "templates", default_templates_dir()));
    auto backend = ercforge::make_backend(opt_str(opts, "backend", "mock"));

    ercforge::CharacteristicStore store;
    if (fs::exists(store_path)) store = ercforge::CharacteristicStore::load(store_path);

    ercforge::ExtractionConfig config;
    config.window_size = opt_int(opts, "window", 12);
    config.input_budget = opt_int(opts, "budget", 1024);
    config.max_new_tokens = opt_int(opts, "max-new-tokens", 24);
    config.parallelism = opt_int(opts, "parallelism", 4);
    if (opts.contains("seed")) config.generation_seed = opts["seed"].get<std::uint64_t>();

    const auto element = ercforge::parse_key_element(opt_str(opts, "relation", "oReact"));
    const auto& variant = registry.variant(opt_int(opts, "template", 4));
    auto report = ercforge::extract_corpus_characteristics(corpus, element, variant, *backend,
                                                           registry, store, config);
    store.save(store_path);
    stamp_output(manifest, "store", store_path);
    finish_manifest(manifest, store_path.string() + ".manifest.json");

    std::cout << "extraction: " << report.completed << " completed (" << report.cache_hits
              << " cache hits, " << report.generated << " generated), " << report.flagged
              << " flagged, " << report.failed << " failed\n";
    return report.failed == 0 ? 0 : 4;
}

// ----------------------------------------------------------------- build --

int cmd_build(const ordered_json& opts) {
    auto manifest = start_manifest("build", opts);
    const fs::path corpus_path = require_str(opts, "corpus");
    const fs::path out = require_str(opts, "out");
    const int stage = opt_int(opts, "stage", 2);
    const auto mode = ercforge::parse_ablation_mode(opt_str(opts, "mode", "wS"));
    stamp_input(manifest, "corpus", corpus_path);

    ercforge::Corpus corpus = load_corpus_auto(opts, "corpus");
    auto registry =
        ercforge::TemplateRegistry::load(opt_str(opts, "templates", default_templates_dir()));
    auto backend = ercforge::make_backend(opt_str(opts, "backend", "mock"));
    const auto counter = [&backend](const std::string& s) { return backend->count_tokens(s); };
    ercforge::TrainingConfig config = config_from_opts(opts);

    std::optional<ercforge::CharacteristicStore> store;
    if (!opt_str(opts, "store").empty()) {
        stamp_input(manifest, "store", opt_str(opts, "store"));
        store = ercforge::CharacteristicStore::load(opt_str(opts, "store"));
    }

    ercforge::StageDataset dataset;
    if (stage == 1) {
        if (mode == ercforge::AblationMode::wS) {
            if (!store) throw UsageError("build --stage 1 --mode wS needs --store");
            dataset = ercforge::build_stage1_dataset(corpus, *store, registry, config,
                                                     backend->id(), counter);
        } else if (mode == ercforge::AblationMode::wR) {
            dataset = ercforge::build_speaker_id_dataset(corpus, registry, config, counter);
        } else {
            throw UsageError("mode " + std::string(ercforge::to_string(mode)) +
                             " has no stage-1 dataset");
        }
    } else if (stage == 2) {
        dataset = ercforge::build_stage2_dataset(corpus, mode, store ? &*store : nullptr,
                                                 registry, config, backend->id(), counter);
    } else {
        throw UsageError("--stage must be 1 or 2");
    }

    ercforge::write_file(out, ercforge::examples_to_jsonl(dataset.examples));
    stamp_output(manifest, "dataset", out);
    finish_manifest(manifest, out.string() + ".manifest.json");
    std::cout << "built stage-" << stage << " dataset: " << dataset.examples.size()
              << " examples";
    if (dataset.excluded_count) std::cout << " (" << dataset.excluded_count << " excluded)";
    std::cout << "\n";
    return 0;
}

// ----------------------------------------------------------------- train --

std::string timestamp_for_path() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

int cmd_train(const ordered_json& opts) {
    auto manifest = start_manifest("train", opts);
    const fs::path corpus_path = require_str(opts, "corpus");
    const auto mode = ercforge::parse_ablation_mode(opt_str(opts, "mode", "wS"));
    ercforge::TrainingConfig config = config_from_opts(opts);
    stamp_input(manifest, "corpus", corpus_path);

    fs::path outdir = opt_str(opts, "out");
    if (outdir.empty())
        outdir = fs::path("runs") / (timestamp_for_path() + "-" + ercforge::to_string(mode) +
                                     "-" + ercforge::to_string(config.key_element));
    fs::create_directories(outdir);

    ercforge::Corpus corpus = load_corpus_auto(opts, "corpus");
    auto registry =
        ercforge::TemplateRegistry::load(opt_str(opts, "templates", default_templates_dir()));
    auto backend = ercforge::make_backend(opt_str(opts, "backend", "toy"));

    std::optional<ercforge::CharacteristicStore> store;
    if (!opt_str(opts, "store").empty()) {
        stamp_input(manifest, "store", opt_str(opts, "store"));
        store = ercforge::CharacteristicStore::load(opt_str(opts, "store"));
    }

    auto run = ercforge::run_training(corpus, mode, *backend, store ? &*store : nullptr,
                                      registry, config);

    // Persist the datasets the run trained on, for replay.
    const auto counter = [&backend](const std::string& s) { return backend->count_tokens(s); };
    if (ercforge::mode_has_stage1(mode)) {
        ercforge::StageDataset stage1 =
            mode == ercforge::AblationMode::wS
                ? ercforge::build_stage1_dataset(corpus, *store, registry, config, backend->id(),
                                                 counter)
                : ercforge::build_speaker_id_dataset(corpus, registry, config, counter);
        ercforge::write_file(outdir / "stage1.jsonl",
                             ercforge::examples_to_jsonl(stage1.examples));
        stamp_output(manifest, "stage1", outdir / "stage1.jsonl");
    }
    ercforge::StageDataset stage2 = ercforge::build_stage2_dataset(
        corpus, mode, store ? &*store : nullptr, registry, config, backend->id(), counter);
    ercforge::write_file(outdir / "stage2.jsonl", ercforge::examples_to_jsonl(stage2.examples));
    stamp_output(manifest, "stage2", outdir / "stage2.jsonl");

    std::size_t failures = 0;
    for (const auto& seed_run : run.seed_runs) {
        if (seed_run.handle) {
            const fs::path handle_path =
                outdir / ("handle-seed-" + std::to_string(seed_run.seed) + ".json");
            ercforge::write_file(handle_path, ercforge::handle_to_json(*seed_run.handle));
            stamp_output(manifest, "handle-seed-" + std::to_string(seed_run.seed), handle_path);
        } else {
            ++failures;
            std::cerr << "seed " << seed_run.seed << " failed: " << seed_run.error << "\n";
        }
    }
    manifest.seeds = config.seeds;
    finish_manifest(manifest, outdir / "manifest.json");

    std::cout << "trained mode " << ercforge::to_string(mode) << " on "
              << corpus.utterance_count() << " utterances across " << config.seeds.size()
              << " seed(s); " << failures << " failed; artifacts in " << outdir.string() << "\n";
    return failures == 0 ? 0 : 4;
}

// --------------------------------------------------------------- predict --

int cmd_predict(const ordered_json& opts) {
    auto manifest = start_manifest("predict", opts);
    const fs::path corpus_path = require_str(opts, "corpus");
    const fs::path handle_path = require_str(opts, "handle");
    const fs::path out = require_str(opts, "out");
    stamp_input(manifest, "corpus", corpus_path);
    stamp_input(manifest, "handle", handle_path);

    ercforge::Corpus corpus = load_corpus_auto(opts, "corpus");
    auto registry =
        ercforge::TemplateRegistry::load(opt_str(opts, "templates", default_templates_dir()));
    auto backend = ercforge::make_backend(opt_str(opts, "backend", "toy"));
    ercforge::ModelHandle handle =
        ercforge::handle_from_json(ercforge::slurp_file(handle_path));
    const auto mode = ercforge::parse_ablation_mode(opt_str(opts, "mode", "woS"));
    ercforge::TrainingConfig config = config_from_opts(opts);

    std::optional<ercforge::CharacteristicStore> store;
    if (!opt_str(opts, "store").empty()) {
        stamp_input(manifest, "store", opt_str(opts, "store"));
        store = ercforge::CharacteristicStore::load(opt_str(opts, "store"));
    }

    ercforge::PredictionSet preds = ercforge::predict_labels(
        corpus, handle, *backend, registry, config, mode, store ? &*store : nullptr,
        opt_int(opts, "parallelism", 1));
    if (!handle.stage_lineage.empty()) preds.seed = handle.stage_lineage.back().seed;
    ercforge::write_file(out, preds.to_json());
    stamp_output(manifest, "predictions", out);
    finish_manifest(manifest, out.string() + ".manifest.json");
    std::cout << "predicted " << preds.items.size() << " utterances\n";
    return 0;
}

// ------------------------------------------------------------------ eval --

int cmd_eval(const ordered_json& opts) {
    auto manifest = start_manifest("eval", opts);
    const fs::path out = require_str(opts, "out");

    auto load_runs = [&](const std::string& key) {
        std::vector<ercforge::PredictionSet> runs;
        for (const auto& path : ercforge::split(require_str(opts, key), ',')) {
            stamp_input(manifest, key, path);
            runs.push_back(ercforge::PredictionSet::from_json(ercforge::slurp_file(path)));
        }
        std::sort(runs.begin(), runs.end(),
                  [](const auto& a, const auto& b) { return a.seed < b.seed; });
        return runs;
    };

    auto runs = load_runs("preds");
    std::vector<ercforge::EvalReport> reports;
    for (const auto& r : runs) reports.push_back(ercforge::evaluate_predictions(r));
    ercforge::EvalReport report =
        reports.size() == 1 ? reports.front() : ercforge::aggregate_runs(reports);

    if (opts.contains("baseline") && !opt_str(opts, "baseline").empty()) {
        auto baseline_runs = load_runs("baseline");
        ercforge::SignificanceEntry entry;
        entry.baseline_id = opt_str(opts, "baseline");
        entry.p_value = ercforge::paired_significance(runs, baseline_runs);
        report.significance.push_back(std::move(entry));
    }

    ercforge::write_file(out, report.to_json());
    stamp_output(manifest, "report", out);
    if (!opt_str(opts, "csv").empty()) {
        std::vector<std::vector<std::string>> rows;
        for (const auto& [label, s] : report.per_class)
            rows.push_back({label, std::to_string(s.precision), std::to_string(s.recall),
                            std::to_string(s.f1), std::to_string(s.support)});
        rows.push_back({"__weighted_f1__", "", "", std::to_string(report.weighted_f1), ""});
        ercforge::write_csv(opt_str(opts, "csv"),
                            {"label", "precision", "recall", "f1", "support"}, rows);
        stamp_output(manifest, "csv", opt_str(opts, "csv"));
    }
    finish_manifest(manifest, out.string() + ".manifest.json");

    std::cout << "weighted-F1 mean " << report.mean << " (std " << report.stddev << ") over "
              << report.seed_scores.size() << " run(s)";
    for (const auto& s : report.significance)
        std::cout << "; p=" << s.p_value << " vs " << s.baseline_id;
    std::cout << "\n";
    return 0;
}

// ------------------------------------------------------------------- mix --

int cmd_mix(const ordered_json& opts) {
    auto manifest = start_manifest("mix", opts);
    const fs::path out = require_str(opts, "out");
    const auto ratio = ercforge::Ratio::parse(opt_str(opts, "ratio", "1"));
    const std::uint64_t seed = opts.contains("seed") ? opts["seed"].get<std::uint64_t>() : 0;

    std::optional<ercforge::UnifiedLabelMap> map;
    if (!opt_str(opts, "unify-map").empty()) {
        stamp_input(manifest, "unify-map", opt_str(opts, "unify-map"));
        map = ercforge::UnifiedLabelMap::load_csv(opt_str(opts, "unify-map"));
    }

    std::vector<ercforge::Corpus> corpora;
    for (const auto& path : ercforge::split(require_str(opts, "in"), ',')) {
        stamp_input(manifest, "corpus", path);
        auto [dataset, split] = peek_corpus_header(path);
        ercforge::Corpus corpus = ercforge::load_corpus(path, dataset, split);
        if (map) corpus = ercforge::unify_labels(corpus, *map);
        corpora.push_back(std::move(corpus));
    }

    ercforge::Corpus mixed = ercforge::mix_corpora(corpora, ratio, seed);
    ercforge::save_corpus(mixed, out);
    stamp_output(manifest, "corpus", out);
    manifest.seeds = {seed};
    finish_manifest(manifest, out.string() + ".manifest.json");
    std::cout << "mixed " << corpora.size() << " corpora at ratio " << ratio.num << "/"
              << ratio.den << " -> " << mixed.conversations.size() << " conversations\n";
    return 0;
}

// ----------------------------------------------------------------- sweep --

int cmd_sweep(const ordered_json& opts) {
    auto manifest = start_manifest("sweep", opts);
    const std::string param = require_str(opts, "param");
    if (param != "window" && param != "relation" && param != "template")
        throw UsageError("--param must be window|relation|template");
    const auto values = ercforge::split(require_str(opts, "values"), ',');
    const fs::path outdir = require_str(opts, "out");
    fs::create_directories(outdir);

    for (const auto& key : {"train", "test"}) stamp_input(manifest, key, require_str(opts, key));

    std::vector<std::vector<std::string>> summary_rows;
    for (const auto& raw_value : values) {
        const std::string value = ercforge::trim(raw_value);
        ordered_json sub = opts;
        sub[param == "window" ? "window" : (param == "relation" ? "relation" : "template")] =
            param == "relation" ? ordered_json(value) : ordered_json(std::stoi(value));
        ercforge::TrainingConfig config = config_from_opts(sub);

        ercforge::Corpus train = load_corpus_auto(sub, "train");
        ercforge::Corpus test = load_corpus_auto(sub, "test");
        auto registry =
            ercforge::TemplateRegistry::load(opt_str(sub, "templates", default_templates_dir()));
        auto backend = ercforge::make_backend(opt_str(sub, "backend", "toy"));
        const auto mode = ercforge::parse_ablation_mode(opt_str(sub, "mode", "wS"));

        std::optional<ercforge::CharacteristicStore> store;
        if (!opt_str(sub, "store").empty())
            store = ercforge::CharacteristicStore::load(opt_str(sub, "store"));

        auto run = ercforge::run_training(train, mode, *backend, store ? &*store : nullptr,
                                          registry, config);
        std::vector<ercforge::EvalReport> reports;
        for (const auto& seed_run : run.seed_runs) {
            if (!seed_run.handle) continue;
            auto preds = ercforge::predict_labels(test, *seed_run.handle, *backend, registry,
                                                  config, mode, store ? &*store : nullptr);
            preds.seed = seed_run.seed;
            reports.push_back(ercforge::evaluate_predictions(preds));
        }
        if (reports.empty()) throw DataError("sweep value '" + value + "': every seed failed");
        ercforge::EvalReport report =
            reports.size() == 1 ? reports.front() : ercforge::aggregate_runs(reports);
        const fs::path report_path = outdir / (param + "-" + value + ".json");
        ercforge::write_file(report_path, report.to_json());
        stamp_output(manifest, param + "-" + value, report_path);
        summary_rows.push_back(
            {value, std::to_string(report.mean), std::to_string(report.stddev)});
        std::cout << param << "=" << value << ": weighted-F1 mean " << report.mean << "\n";
    }

    const fs::path summary = outdir / "summary.csv";
    ercforge::write_csv(summary, {param, "mean_weighted_f1", "stddev"}, summary_rows);
    stamp_output(manifest, "summary", summary);
    finish_manifest(manifest, outdir / "manifest.json");
    return 0;
}

// ---------------------------------------------------------------- report --

int cmd_report(const ordered_json& opts) {
    auto manifest = start_manifest("report", opts);
    const fs::path outdir = require_str(opts, "out");
    fs::create_directories(outdir);
    const bool plots = opt_bool(opts, "plots");
    bool produced = false;

    // Sweep summary: re-plot summary.csv from a sweep output directory.
    if (!opt_str(opts, "sweep-dir").empty()) {
        const fs::path sweep_summary = fs::path(opt_str(opts, "sweep-dir")) / "summary.csv";
        stamp_input(manifest, "sweep-summary", sweep_summary);
        std::istringstream in(ercforge::slurp_file(sweep_summary));
        std::string line;
        std::getline(in, line);
        const std::string param = ercforge::split(line, ',').front();
        ercforge::PlotSeries series;
        series.name = "mean weighted-F1";
        std::vector<std::vector<std::string>> rows;
        while (std::getline(in, line)) {
            if (ercforge::trim(line).empty()) continue;
            auto fields = ercforge::split(line, ',');
            rows.push_back(fields);
            try {
                series.points.emplace_back(std::stod(fields[0]), std::stod(fields[1]));
            } catch (const std::exception&) {
                series.points.emplace_back(static_cast<double>(series.points.size()),
                                           std::stod(fields[1]));
            }
        }
        ercforge::write_csv(outdir / (param + "_scores.csv"),
                            {param, "mean_weighted_f1", "stddev"}, rows);
        stamp_output(manifest, "scores", outdir / (param + "_scores.csv"));
        if (plots) {
            ercforge::write_line_plot_svg(outdir / (param + "_scores.svg"),
                                          "Score vs " + param, param, "weighted-F1", {series});
            stamp_output(manifest, "plot", outdir / (param + "_scores.svg"));
        }
        produced = true;
    }

    // Robustness: single vs mixed-ratio eval reports.
    // --single name=report.json,... --mixed name:ratio=report.json,... --ratios 1/8,...
    if (!opt_str(opts, "single").empty()) {
        std::map<std::string, double> single_scores;
        for (const auto& pair : ercforge::split(require_str(opts, "single"), ',')) {
            auto eq = pair.find('=');
            if (eq == std::string::npos) throw UsageError("bad --single entry: " + pair);
            const std::string name = pair.substr(0, eq);
            const std::string path = pair.substr(eq + 1);
            stamp_input(manifest, "single-" + name, path);
            single_scores[name] =
                ercforge::EvalReport::from_json(ercforge::slurp_file(path)).mean;
        }
        std::map<std::pair<std::string, std::string>, double> mixed_scores;
        for (const auto& pair : ercforge::split(require_str(opts, "mixed"), ',')) {
            auto eq = pair.find('=');
            auto colon = pair.find(':');
            if (eq == std::string::npos || colon == std::string::npos || colon > eq)
                throw UsageError("bad --mixed entry: " + pair);
            const std::string name = pair.substr(0, colon);
            const std::string ratio = pair.substr(colon + 1, eq - colon - 1);
            const std::string path = pair.substr(eq + 1);
            stamp_input(manifest, "mixed-" + name + "-" + ratio, path);
            mixed_scores[{name, ratio}] =
                ercforge::EvalReport::from_json(ercforge::slurp_file(path)).mean;
        }
        const auto ratios = ercforge::split(require_str(opts, "ratios"), ',');
        auto gaps = ercforge::robustness_summary(single_scores, mixed_scores, ratios);

        std::vector<std::vector<std::string>> rows;
        for (const auto& [name, gap] : gaps) {
            std::vector<std::string> row = {name, std::to_string(single_scores[name])};
            for (const auto& ratio : ratios)
                row.push_back(std::to_string(mixed_scores[{name, ratio}]));
            row.push_back(std::to_string(gap));
            rows.push_back(std::move(row));
        }
        std::vector<std::string> header = {"dataset", "single"};
        for (const auto& ratio : ratios) header.push_back("mixed " + ratio);
        header.push_back("avg_gap");
        ercforge::write_csv(outdir / "robustness.csv", header, rows);
        stamp_output(manifest, "robustness", outdir / "robustness.csv");
        if (plots) {
            std::vector<ercforge::PlotSeries> series;
            for (const auto& [name, _] : gaps) {
                ercforge::PlotSeries s;
                s.name = name;
                for (const auto& ratio : ratios) {
                    const auto r = ercforge::Ratio::parse(ratio);
                    s.points.emplace_back(r.value(), mixed_scores[{name, ratio}]);
                }
                series.push_back(std::move(s));
            }
            ercforge::write_line_plot_svg(outdir / "robustness.svg", "Score vs mixing ratio",
                                          "ratio", "weighted-F1", series);
            stamp_output(manifest, "robustness-plot", outdir / "robustness.svg");
        }
        produced = true;
    }

    if (!produced) throw UsageError("report needs --sweep-dir and/or --single/--mixed/--ratios");
    finish_manifest(manifest, outdir / "manifest.json");
    std::cout << "report artifacts written to " << outdir.string() << "\n";
    return 0;
}

// ----------------------------------------------------------------- rerun --

int cmd_rerun(const ordered_json& opts) {
    const fs::path manifest_path = require_str(opts, "manifest");
    ercforge::Manifest m = ercforge::Manifest::load(manifest_path);
    ordered_json replay = m.options;
    if (!opt_str(opts, "out").empty()) replay["out"] = opt_str(opts, "out");
    std::cout << "replaying " << m.command << " from " << manifest_path.string() << "\n";
    return run_command(m.command, replay);
}

int run_command(const std::string& command, ordered_json opts) {
    if (command == "ingest") return cmd_ingest(opts);
    if (command == "extract") return cmd_extract(opts);
    if (command == "build") return cmd_build(opts);
    if (command == "train") return cmd_train(opts);
    if (command == "predict") return cmd_predict(opts);
    if (command == "eval") return cmd_eval(opts);
    if (command == "mix") return cmd_mix(opts);
    if (command == "sweep") return cmd_sweep(opts);
    if (command == "report") return cmd_report(opts);
    if (command == "rerun") return cmd_rerun(opts);
    throw UsageError("unknown command: " + command);
}

// Pulls a value from the static config file when the flag was not passed:
// section [command] first, then top level.
ordered_json merged_options(const CLI::App* sub, const std::map<std::string, ordered_json>& cli,
                            const ordered_json& config, const std::string& command) {
    ordered_json opts = ordered_json::object();
    const ordered_json section =
        config.contains(command) ? config[command] : ordered_json::object();
    for (const auto& [name, value] : cli) {
        const std::string flag = "--" + name;
        if (sub->count(flag) > 0) {
            opts[name] = value;
        } else if (section.contains(name)) {
            opts[name] = section[name];
        } else if (config.contains(name) && !config[name].is_object()) {
            opts[name] = config[name];
        } else if (!value.is_null()) {
            opts[name] = value;
        }
    }
    return opts;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ercforge: speaker-characteristic instruction-tuning pipeline for "
                 "conversation emotion recognition"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file merged with flags (flags win)");

    // Each subcommand owns its flag values and defers to run_command.
    struct SubState {
        std::string command;
        const CLI::App* sub = nullptr;
        std::map<std::string, ordered_json> values;
    };
    std::list<SubState> states;
    SubState* active = nullptr;
    auto new_state = [&](CLI::App* sub, const std::string& command) -> SubState& {
        SubState& st = states.emplace_back();
        st.command = command;
        st.sub = sub;
        sub->callback([&active, &st] { active = &st; });
        return st;
    };

    auto add_common_training_flags = [](CLI::App* sub, std::map<std::string, ordered_json>& v) {
        auto bind_int = [sub, &v](const std::string& name, int def, const std::string& help,
                                  const std::string& def_str = "") {
            v[name] = def;
            auto* opt = sub->add_option_function<int>(
                "--" + name, [&v, name](const int& x) { v[name] = x; }, help);
            opt->default_str(def_str.empty() ? std::to_string(def) : def_str);
        };
        v["lr"] = 2e-4;
        sub->add_option_function<double>(
               "--lr", [&v](const double& x) { v["lr"] = x; }, "learning rate")
            ->default_str("2e-4");
        bind_int("batch1", 8, "stage-1 batch size");
        bind_int("batch2", 16, "stage-2 batch size");
        bind_int("epochs1", 3, "stage-1 epochs");
        bind_int("epochs2", 3, "stage-2 epochs");
        bind_int("window", 12, "context window size");
        bind_int("budget", 1024, "input token budget");
        bind_int("template", 4, "template variant id");
        v["relation"] = "oReact";
        sub->add_option_function<std::string>(
               "--relation", [&v](const std::string& x) { v["relation"] = x; },
               "key element (xIntent|xReact|oReact|xWant|oWant|xEffect|oEffect|xNeed|xAttr)")
            ->default_str("oReact");
        v["seeds"] = "1,2,3,4,5";
        sub->add_option_function<std::string>(
               "--seeds", [&v](const std::string& x) { v["seeds"] = x; },
               "comma-separated training seeds")
            ->default_str("1,2,3,4,5");
        v["templates"] = nullptr;
        sub->add_option_function<std::string>(
            "--templates", [&v](const std::string& x) { v["templates"] = x; },
            "template directory (default data/templates)");
    };

    auto bind_str = [](CLI::App* sub, std::map<std::string, ordered_json>& v,
                       const std::string& name, const std::string& help, bool required = false,
                       const std::string& def = "") {
        if (def.empty())
            v[name] = nullptr;
        else
            v[name] = def;
        auto* opt = sub->add_option_function<std::string>(
            "--" + name, [&v, name](const std::string& x) { v[name] = x; }, help);
        if (required) opt->required();
        if (!def.empty()) opt->default_str(def);
        return opt;
    };
    auto bind_u64 = [](CLI::App* sub, std::map<std::string, ordered_json>& v,
                       const std::string& name, const std::string& help) {
        v[name] = nullptr;
        sub->add_option_function<std::uint64_t>(
            "--" + name, [&v, name](const std::uint64_t& x) { v[name] = x; }, help);
    };

    {
        auto* sub = app.add_subcommand("ingest", "validate and normalize a raw JSONL corpus");
        auto& v = new_state(sub, "ingest").values;
        bind_str(sub, v, "in", "raw corpus JSONL", true);
        bind_str(sub, v, "out", "validated corpus path", true);
        bind_str(sub, v, "dataset", "dataset id (iemocap|meld|emorynlp|custom)");
        bind_str(sub, v, "split", "train|dev|test");
        bind_str(sub, v, "labels", "comma-separated label space override");
        bind_str(sub, v, "unify-map", "CSV label map applied after ingestion");
        bind_str(sub, v, "report", "validation report path");
    }
    {
        auto* sub = app.add_subcommand("extract", "generate speaker characteristics");
        auto& v = new_state(sub, "extract").values;
        bind_str(sub, v, "corpus", "corpus JSONL", true);
        bind_str(sub, v, "store", "characteristic store path", true);
        bind_str(sub, v, "relation", "key element", false, "oReact");
        v["template"] = 4;
        sub->add_option_function<int>(
               "--template", [&v](const int& x) { v["template"] = x; }, "template variant id")
            ->default_str("4");
        bind_str(sub, v, "backend", "mock[:seed]|toy[:dir]|http:<url>|fixture:<store>", false,
                 "mock");
        v["parallelism"] = 4;
        sub->add_option_function<int>(
               "--parallelism", [&v](const int& x) { v["parallelism"] = x; },
               "concurrent generate calls")
            ->default_str("4");
        v["window"] = 12;
        sub->add_option_function<int>(
               "--window", [&v](const int& x) { v["window"] = x; }, "context window size")
            ->default_str("12");
        v["budget"] = 1024;
        sub->add_option_function<int>(
               "--budget", [&v](const int& x) { v["budget"] = x; }, "input token budget")
            ->default_str("1024");
        v["max-new-tokens"] = 24;
        sub->add_option_function<int>(
               "--max-new-tokens", [&v](const int& x) { v["max-new-tokens"] = x; },
               "decoder cap (headroom over the ten-word limit)")
            ->default_str("24");
        bind_u64(sub, v, "seed", "generation seed");
        bind_str(sub, v, "templates", "template directory");
        bind_str(sub, v, "dataset", "dataset id override");
        bind_str(sub, v, "split", "split override");
    }
    {
        auto* sub = app.add_subcommand("build", "build a stage dataset");
        auto& v = new_state(sub, "build").values;
        bind_str(sub, v, "corpus", "corpus JSONL", true);
        bind_str(sub, v, "out", "dataset JSONL output", true);
        v["stage"] = 2;
        sub->add_option_function<int>(
               "--stage", [&v](const int& x) { v["stage"] = x; }, "1 or 2")
            ->default_str("2");
        bind_str(sub, v, "mode", "woS|wM|wR|wS", false, "wS");
        bind_str(sub, v, "store", "characteristic store (stage 1 wS, stage 2 wM)");
        bind_str(sub, v, "backend", "backend whose tokenizer/key is used", false, "mock");
        add_common_training_flags(sub, v);
        bind_str(sub, v, "dataset", "dataset id override");
        bind_str(sub, v, "split", "split override");
    }
    {
        auto* sub = app.add_subcommand("train", "run staged fine-tuning across seeds");
        auto& v = new_state(sub, "train").values;
        bind_str(sub, v, "corpus", "training corpus JSONL", true);
        bind_str(sub, v, "mode", "woS|wM|wR|wS", false, "wS");
        bind_str(sub, v, "backend", "training backend", false, "toy");
        bind_str(sub, v, "store", "characteristic store");
        bind_str(sub, v, "out", "run directory (default runs/<timestamp>-<mode>-<element>)");
        add_common_training_flags(sub, v);
        bind_str(sub, v, "dataset", "dataset id override");
        bind_str(sub, v, "split", "split override");
    }
    {
        auto* sub = app.add_subcommand("predict", "label a test corpus with a trained handle");
        auto& v = new_state(sub, "predict").values;
        bind_str(sub, v, "corpus", "test corpus JSONL", true);
        bind_str(sub, v, "handle", "model handle JSON", true);
        bind_str(sub, v, "out", "prediction set output", true);
        bind_str(sub, v, "backend", "inference backend", false, "toy");
        bind_str(sub, v, "mode", "woS|wM|wR|wS", false, "woS");
        bind_str(sub, v, "store", "characteristic store (mode wM)");
        v["parallelism"] = 1;
        sub->add_option_function<int>(
               "--parallelism", [&v](const int& x) { v["parallelism"] = x; },
               "concurrent generate calls")
            ->default_str("1");
        add_common_training_flags(sub, v);
        bind_str(sub, v, "dataset", "dataset id override");
        bind_str(sub, v, "split", "split override");
    }
    {
        auto* sub = app.add_subcommand("eval", "score prediction sets");
        auto& v = new_state(sub, "eval").values;
        bind_str(sub, v, "preds", "comma-separated prediction sets (one per seed)", true);
        bind_str(sub, v, "out", "eval report output", true);
        bind_str(sub, v, "baseline", "comma-separated baseline prediction sets");
        bind_str(sub, v, "csv", "per-class CSV output");
    }
    {
        auto* sub = app.add_subcommand("mix", "mix unified corpora at a ratio");
        auto& v = new_state(sub, "mix").values;
        bind_str(sub, v, "in", "comma-separated corpus files", true);
        bind_str(sub, v, "out", "mixed corpus output", true);
        bind_str(sub, v, "ratio", "sampling ratio, e.g. 0.125 or 1/8", false, "1");
        bind_u64(sub, v, "seed", "sampling seed");
        bind_str(sub, v, "unify-map", "CSV label map applied before mixing");
    }
    {
        auto* sub = app.add_subcommand("sweep", "train/eval across parameter values");
        auto& v = new_state(sub, "sweep").values;
        bind_str(sub, v, "param", "window|relation|template", true);
        bind_str(sub, v, "values", "comma-separated values", true);
        bind_str(sub, v, "train", "training corpus JSONL", true);
        bind_str(sub, v, "test", "test corpus JSONL", true);
        bind_str(sub, v, "out", "sweep output directory", true);
        bind_str(sub, v, "mode", "woS|wM|wR|wS", false, "wS");
        bind_str(sub, v, "backend", "training backend", false, "toy");
        bind_str(sub, v, "store", "characteristic store");
        add_common_training_flags(sub, v);
    }
    {
        auto* sub = app.add_subcommand("report", "emit CSV tables and SVG plots");
        auto& v = new_state(sub, "report").values;
        bind_str(sub, v, "out", "report output directory", true);
        bind_str(sub, v, "sweep-dir", "sweep directory to summarize");
        bind_str(sub, v, "single", "dataset=report.json pairs for robustness");
        bind_str(sub, v, "mixed", "dataset:ratio=report.json entries for robustness");
        bind_str(sub, v, "ratios", "comma-separated ratios, e.g. 1/8,1/4,1/2,1");
        v["plots"] = false;
        sub->add_flag_function(
            "--plots", [&v](std::int64_t) { v["plots"] = true; }, "emit SVG plots");
    }
    {
        auto* sub = app.add_subcommand("rerun", "replay a command from its manifest");
        auto& v = new_state(sub, "rerun").values;
        bind_str(sub, v, "manifest", "manifest JSON to replay", true);
        bind_str(sub, v, "out", "override the output path");
    }

    try {
        app.parse(argc, argv);
        ordered_json config = ordered_json::object();
        if (!config_path.empty()) {
            try {
                config = ordered_json::parse(ercforge::slurp_file(config_path));
            } catch (const std::exception& e) {
                throw UsageError("bad config file " + config_path + ": " + e.what());
            }
        }
        if (!active) throw UsageError("no subcommand selected");
        ordered_json opts = merged_options(active->sub, active->values, config, active->command);
        return run_command(active->command, opts);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "ercforge: error: [usage] " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "ercforge: error: [usage] " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "ercforge: error: [data] " << e.what() << "\n";
        return 3;
    } catch (const BackendError& e) {
        std::cerr << "ercforge: error: [backend:" << ercforge::backend_error_kind_name(e.kind)
                  << "] " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "ercforge: error: [internal] " << e.what() << "\n";
        return 1;
    }
}

// Inference over test corpora, label parsing, weighted/per-class F1,
// multi-seed aggregation, paired significance, and robustness summaries.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ercforge/backend.hpp"
#include "ercforge/characteristics.hpp"
#include "ercforge/corpus.hpp"
#include "ercforge/pipeline.hpp"

namespace ercforge {

inline const std::string kUnknownLabel = "unknown";

struct PredictionItem {
    std::string conversation_id;
    int target_index = 0;
    std::string gold;
    std::string raw_output;
    std::string parsed;  // label-space member or "unknown"
    std::string note;    // backend error text, when any
};

struct PredictionSet {
    std::vector<PredictionItem> items;
    std::vector<StageDescriptor> lineage;
    std::string corpus_id;
    LabelSpace label_space;
    std::uint64_t seed = 0;

    std::string to_json() const;
    static PredictionSet from_json(const std::string& text);
};

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct SignificanceEntry {
    std::string baseline_id;
    double p_value = 1.0;
};

struct EvalReport {
    std::string corpus_id;
    LabelSpace label_space;
    double weighted_f1 = 0.0;
    std::map<std::string, ClassScores> per_class;
    // Rows = gold labels in space order; columns = space order plus a final
    // "unknown" column.
    std::vector<std::vector<std::size_t>> confusion;
    double unknown_rate = 0.0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> seed_scores;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
    std::vector<SignificanceEntry> significance;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

// lowercase/trim/strip punctuation; exact match, then unique-prefix match,
// then first label-space member present as a whole word, else "unknown".
std::string parse_label(const std::string& raw, const LabelSpace& space);

double weighted_f1(const PredictionSet& preds);

// Full single-run report (scores, confusion, unknown rate).
EvalReport evaluate_predictions(const PredictionSet& preds);

// Renders the recognition prompt per test utterance (no gold), generates at
// temperature 0, parses. Backend errors become "unknown" items with a note.
PredictionSet predict_labels(const Corpus& corpus_test, const ModelHandle& handle,
                             Backend& backend, const TemplateRegistry& registry,
                             const TrainingConfig& config, AblationMode mode = AblationMode::woS,
                             const CharacteristicStore* store = nullptr, int parallelism = 1);

// Mean weighted-F1 across seeds with sample standard deviation and per-class
// means. All reports must cover the same corpus and label space.
EvalReport aggregate_runs(const std::vector<EvalReport>& reports);

// Two-sided paired t-test over per-seed weighted-F1 pairs. Zero-variance
// differences degenerate to p = 1 (all zero) or p = 0 (constant nonzero).
double paired_significance(const std::vector<PredictionSet>& runs_a,
                           const std::vector<PredictionSet>& runs_b);
double paired_significance_scores(const std::vector<double>& scores_a,
                                  const std::vector<double>& scores_b);

// avg_gap[d] = mean over ratios of (single[d] - mixed[d, ratio]).
std::map<std::string, double> robustness_summary(
    const std::map<std::string, double>& single_scores,
    const std::map<std::pair<std::string, std::string>, double>& mixed_scores,
    const std::vector<std::string>& ratios);

}  // namespace ercforge

// Conversation corpora: JSONL ingestion, validation, label spaces, unified
// label mapping and cross-dataset mixing.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ercforge {

struct Utterance {
    int index = 0;
    std::string speaker;  // canonical Speaker{k} after ingestion
    std::string text;
    std::string label;
};

struct Conversation {
    std::string conversation_id;
    std::vector<Utterance> utterances;

    int size() const { return static_cast<int>(utterances.size()); }
};

struct LabelSpace {
    std::vector<std::string> labels;  // ordered, distinct, lowercase

    int K() const { return static_cast<int>(labels.size()); }
    bool contains(const std::string& label) const;
    std::string joined() const;  // "a, b, c" in space order

    // Validates ordering/case/distinctness invariants (K >= 2).
    static LabelSpace make(std::vector<std::string> labels);
};

struct Corpus {
    std::string dataset_id;
    std::string split;
    std::vector<Conversation> conversations;
    LabelSpace label_space;

    std::size_t utterance_count() const;
};

struct Violation {
    std::string conversation_id;
    int utterance_index = -1;  // -1 when the violation is corpus-level
    std::string message;
};

struct ValidationReport {
    std::size_t conversation_count = 0;
    std::size_t utterance_count = 0;
    std::map<std::string, std::size_t> label_histogram;
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
};

struct UnifiedLabelMap {
    struct Row {
        std::string dataset;
        std::string source_label;
        std::string unified_label;
    };

    std::vector<Row> rows;
    LabelSpace unified_space;

    std::optional<std::string> lookup(const std::string& dataset,
                                      const std::string& source_label) const;

    // CSV with header: dataset,source_label,unified_label
    static UnifiedLabelMap load_csv(const std::filesystem::path& path);
};

// Exact rational in (0, 1]; mixing cardinalities use integer arithmetic so
// ceil(ratio * N) never suffers floating-point drift.
struct Ratio {
    long long num = 1;
    long long den = 1;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    // ceil(num * n / den)
    std::size_t ceil_of(std::size_t n) const;

    // Accepts "1/8" or a decimal like "0.125".
    static Ratio parse(const std::string& text);
};

// Label spaces of the three stock datasets, in their published order.
const LabelSpace* builtin_label_space(const std::string& dataset_id);

// Loads the JSONL corpus format (one conversation object per line). Speaker
// names are canonicalized to Speaker{k} by first appearance, labels are
// lowercased, and conversation ids are namespaced as "<dataset>/<id>".
// Label space resolution order: explicit arg, "<path>.labels.json" sidecar,
// builtin space for known dataset ids, else first-appearance order from data.
Corpus load_corpus(const std::filesystem::path& path, const std::string& dataset_id,
                   const std::string& split,
                   std::optional<LabelSpace> label_space = std::nullopt);

// Writes the JSONL format plus a "<path>.labels.json" sidecar carrying the
// label space so non-builtin corpora (mixed, unified) round-trip.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

std::string corpus_to_jsonl(const Corpus& corpus);

ValidationReport validate_corpus(const Corpus& corpus);

Corpus unify_labels(const Corpus& corpus, const UnifiedLabelMap& map);

// Samples ceil(ratio * N) whole conversations per source without replacement,
// concatenates in source order, then shuffles. Deterministic in (inputs,
// ratio, seed).
Corpus mix_corpora(const std::vector<Corpus>& corpora, Ratio ratio, std::uint64_t seed);

}  // namespace ercforge

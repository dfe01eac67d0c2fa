// Speaker-characteristic extraction over a corpus: prompt-keyed caching,
// ten-word validation with truncation repair, and JSONL persistence ordered
// by (conversation_id, target_index, key_element).
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "ercforge/backend.hpp"
#include "ercforge/corpus.hpp"
#include "ercforge/prompting.hpp"

namespace ercforge {

struct CharacteristicRecord {
    std::string conversation_id;
    int target_index = 0;
    std::string key_element;
    int variant_id = 0;
    std::string backend_id;
    std::string prompt_hash;
    std::string text;
    int word_count = 0;
    bool flagged = false;  // failed the ten-word check before repair
};

struct CharacteristicKey {
    std::string conversation_id;
    int target_index = 0;
    std::string key_element;
    int variant_id = 0;
    std::string backend_id;

    auto tie() const {
        return std::tie(conversation_id, target_index, key_element, variant_id, backend_id);
    }
    bool operator<(const CharacteristicKey& o) const { return tie() < o.tie(); }
};

struct ExtractionFailure {
    std::string conversation_id;
    int target_index = 0;
    std::string key_element;
    int variant_id = 0;
    std::string backend_id;
    std::string error;
};

class CharacteristicStore {
public:
    CharacteristicStore() = default;
    // Moves transfer the records; the mutex itself is not movable. Only safe
    // while no other thread touches either store.
    CharacteristicStore(CharacteristicStore&& other) noexcept;
    CharacteristicStore& operator=(CharacteristicStore&& other) noexcept;

    static CharacteristicStore load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;  // sidecar: <path>.errors.jsonl
    std::string to_jsonl() const;

    void upsert(CharacteristicRecord record);  // atomic; last write wins per key
    void record_failure(ExtractionFailure failure);
    std::optional<CharacteristicRecord> find(const CharacteristicKey& key) const;
    std::vector<CharacteristicRecord> sorted_records() const;
    const std::vector<ExtractionFailure>& failures() const { return failures_; }
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<CharacteristicKey, CharacteristicRecord> records_;
    std::vector<ExtractionFailure> failures_;
};

// normalized: trimmed, inner whitespace collapsed, one layer of surrounding
// quotes stripped. ok: non-empty and at most ten words.
struct ValidatedCharacteristic {
    std::string normalized;
    bool ok = false;
    int word_count = 0;
};

ValidatedCharacteristic validate_characteristic(const std::string& text);

struct ExtractionConfig {
    int window_size = 12;
    int input_budget = 1024;
    int max_new_tokens = 24;  // headroom above ten words for subword inflation
    int parallelism = 4;
    std::optional<std::uint64_t> generation_seed;
};

struct ExtractionReport {
    std::size_t completed = 0;
    std::size_t failed = 0;
    std::size_t cache_hits = 0;
    std::size_t generated = 0;
    std::size_t flagged = 0;    // over-length generations repaired by truncation
};

// Fills the store with one record per utterance. Cache hits (same prompt
// digest) are not regenerated; per-utterance backend failures go to the
// failure sidecar without aborting the batch.
ExtractionReport extract_corpus_characteristics(const Corpus& corpus, KeyElement element,
                                                const TemplateVariant& variant, Backend& backend,
                                                const TemplateRegistry& registry,
                                                CharacteristicStore& store,
                                                const ExtractionConfig& config);

}  // namespace ercforge

#include "ercforge/characteristics.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ercforge/context.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/hash.hpp"
#include "ercforge/io.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

using nlohmann::ordered_json;

CharacteristicStore::CharacteristicStore(CharacteristicStore&& other) noexcept {
    std::lock_guard<std::mutex> lock(other.mutex_);
    records_ = std::move(other.records_);
    failures_ = std::move(other.failures_);
}

CharacteristicStore& CharacteristicStore::operator=(CharacteristicStore&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mutex_, other.mutex_);
        records_ = std::move(other.records_);
        failures_ = std::move(other.failures_);
    }
    return *this;
}

CharacteristicStore CharacteristicStore::load(const std::filesystem::path& path) {
    CharacteristicStore store;
    std::istringstream in(slurp_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw DataError("store line " + std::to_string(line_no) + ": " + e.what());
        }
        CharacteristicRecord r;
        r.conversation_id = j.at("conversation_id").get<std::string>();
        r.target_index = j.at("target_index").get<int>();
        r.key_element = j.at("key_element").get<std::string>();
        r.variant_id = j.at("variant_id").get<int>();
        r.backend_id = j.at("backend_id").get<std::string>();
        r.prompt_hash = j.at("prompt_hash").get<std::string>();
        r.text = j.at("text").get<std::string>();
        r.word_count = j.at("word_count").get<int>();
        if (j.contains("flagged")) r.flagged = j["flagged"].get<bool>();
        store.upsert(std::move(r));
    }
    return store;
}

std::string CharacteristicStore::to_jsonl() const {
    std::string out;
    for (const auto& r : sorted_records()) {
        ordered_json j;
        j["conversation_id"] = r.conversation_id;
        j["target_index"] = r.target_index;
        j["key_element"] = r.key_element;
        j["variant_id"] = r.variant_id;
        j["backend_id"] = r.backend_id;
        j["prompt_hash"] = r.prompt_hash;
        j["text"] = r.text;
        j["word_count"] = r.word_count;
        j["flagged"] = r.flagged;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void CharacteristicStore::save(const std::filesystem::path& path) const {
    write_file(path, to_jsonl());
    std::lock_guard<std::mutex> lock(mutex_);
    if (!failures_.empty()) {
        std::string out;
        for (const auto& f : failures_) {
            ordered_json j;
            j["conversation_id"] = f.conversation_id;
            j["target_index"] = f.target_index;
            j["key_element"] = f.key_element;
            j["variant_id"] = f.variant_id;
            j["backend_id"] = f.backend_id;
            j["error"] = f.error;
            out += j.dump();
            out += '\n';
        }
        std::filesystem::path sidecar = path;
        sidecar += ".errors.jsonl";
        write_file(sidecar, out);
    }
}

void CharacteristicStore::upsert(CharacteristicRecord record) {
    CharacteristicKey key{record.conversation_id, record.target_index, record.key_element,
                          record.variant_id, record.backend_id};
    std::lock_guard<std::mutex> lock(mutex_);
    records_[std::move(key)] = std::move(record);
}

void CharacteristicStore::record_failure(ExtractionFailure failure) {
    std::lock_guard<std::mutex> lock(mutex_);
    failures_.push_back(std::move(failure));
}

std::optional<CharacteristicRecord> CharacteristicStore::find(
    const CharacteristicKey& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

std::vector<CharacteristicRecord> CharacteristicStore::sorted_records() const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<CharacteristicRecord> out;
    out.reserve(records_.size());
    for (const auto& [key, record] : records_) out.push_back(record);
    // Map order is already (conversation_id, target_index, key_element, ...).
    return out;
}

std::size_t CharacteristicStore::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return records_.size();
}

ValidatedCharacteristic validate_characteristic(const std::string& text) {
    std::string normalized = collapse_whitespace(trim(text));
    if (normalized.size() >= 2) {
        const char first = normalized.front();
        const char last = normalized.back();
        if ((first == '"' && last == '"') || (first == '\'' && last == '\''))
            normalized = trim(normalized.substr(1, normalized.size() - 2));
    }
    ValidatedCharacteristic v;
    v.normalized = normalized;
    v.word_count = whitespace_token_count(normalized);
    v.ok = !normalized.empty() && v.word_count <= 10;
    return v;
}

namespace {

std::string first_n_words(const std::string& text, int n) {
    auto words = split_whitespace(text);
    if (static_cast<int>(words.size()) > n) words.resize(static_cast<std::size_t>(n));
    return join(words, " ");
}

struct WorkItem {
    const Conversation* conversation = nullptr;
    int target_index = 0;
};

}  // namespace

ExtractionReport extract_corpus_characteristics(const Corpus& corpus, KeyElement element,
                                                const TemplateVariant& variant, Backend& backend,
                                                const TemplateRegistry& registry,
                                                CharacteristicStore& store,
                                                const ExtractionConfig& config) {
    std::vector<WorkItem> work;
    for (const auto& conv : corpus.conversations)
        for (const auto& u : conv.utterances) work.push_back({&conv, u.index});

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> cache_hits{0};
    std::atomic<std::size_t> generated{0};
    std::atomic<std::size_t> failed{0};
    std::atomic<std::size_t> flagged{0};
    const auto counter = [&backend](const std::string& s) { return backend.count_tokens(s); };
    const ModelHandle handle = backend.base_handle();

    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= work.size()) return;
            const WorkItem& item = work[i];
            try {
                DialogueWindow window =
                    build_window(*item.conversation, item.target_index, config.window_size);
                RenderedPrompt prompt = registry.render_extraction_prompt(window, element, variant);
                std::string text =
                    truncate_to_budget(prompt.text, config.input_budget, counter);
                const std::string prompt_digest = digest(text);

                CharacteristicKey key{window.conversation_id, item.target_index,
                                      to_string(element), variant.variant_id, backend.id()};
                if (auto existing = store.find(key);
                    existing && existing->prompt_hash == prompt_digest) {
                    cache_hits.fetch_add(1);
                    continue;
                }

                GenerationRequest request;
                request.prompt = text;
                request.max_new_tokens = config.max_new_tokens;
                request.temperature = 0.0;
                request.seed = config.generation_seed;
                GenerationResult result = backend.generate(handle, request);
                if (result.finish_reason == FinishReason::Error)
                    throw BackendError(BackendError::Kind::Protocol,
                                       "backend reported a generation error");
                generated.fetch_add(1);

                ValidatedCharacteristic validated = validate_characteristic(result.text);
                CharacteristicRecord record;
                record.conversation_id = window.conversation_id;
                record.target_index = item.target_index;
                record.key_element = to_string(element);
                record.variant_id = variant.variant_id;
                record.backend_id = backend.id();
                record.prompt_hash = prompt_digest;
                if (validated.ok) {
                    record.text = validated.normalized;
                } else if (validated.word_count > 10) {
                    // Over-length generations are clipped to the first ten
                    // words rather than dropped, and flagged for the report.
                    record.text = first_n_words(validated.normalized, 10);
                    record.flagged = true;
                    flagged.fetch_add(1);
                } else {
                    throw DataError("backend produced an empty characteristic");
                }
                record.word_count = whitespace_token_count(record.text);
                store.upsert(std::move(record));
            } catch (const std::exception& e) {
                failed.fetch_add(1);
                store.record_failure({item.conversation->conversation_id, item.target_index,
                                      to_string(element), variant.variant_id, backend.id(),
                                      e.what()});
            }
        }
    };

    const int n_threads = std::max(1, std::min<int>(config.parallelism,
                                                    static_cast<int>(work.size())));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    ExtractionReport report;
    report.cache_hits = cache_hits.load();
    report.generated = generated.load();
    report.failed = failed.load();
    report.flagged = flagged.load();
    report.completed = report.cache_hits + report.generated;
    return report;
}

}  // namespace ercforge

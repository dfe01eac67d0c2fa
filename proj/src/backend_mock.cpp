#include <array>

#include "ercforge/backend.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/hash.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

namespace {

// Fixed word list for hash-derived stub generations.
constexpr std::array<const char*, 32> kMockWords = {
    "listener", "speaker",  "seems",    "appears", "curious",  "calm",     "surprised",
    "upset",    "eager",    "uneasy",   "hopeful", "confused", "amused",   "annoyed",
    "relieved", "worried",  "excited",  "tense",   "quiet",    "warm",     "distant",
    "friendly", "guarded",  "cheerful", "weary",   "steady",   "restless", "sincere",
    "doubtful", "gentle",   "abrupt",   "patient",
};

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace

MockBackend::MockBackend(std::uint64_t seed) : seed_(seed) {}

ModelHandle MockBackend::base_handle() const {
    ModelHandle h;
    h.backend_id = id();
    h.model_id = "mock-base";
    return h;
}

GenerationResult MockBackend::generate(const ModelHandle& handle,
                                       const GenerationRequest& request) {
    if (request.max_new_tokens < 1) throw DataError("max_new_tokens must be >= 1");
    if (request.temperature < 0) throw DataError("temperature must be >= 0");
    generate_calls_.fetch_add(1);

    std::uint64_t state = fnv1a64(request.prompt) ^ seed_ ^ fnv1a64(handle.model_id);
    if (request.seed) state ^= *request.seed * 0x9e3779b97f4a7c15ull;

    int words = 1 + static_cast<int>(splitmix64(state) % 10);
    FinishReason reason = FinishReason::Stop;
    if (words > request.max_new_tokens) {
        words = request.max_new_tokens;
        reason = FinishReason::Length;
    }
    std::string text;
    for (int i = 0; i < words; ++i) {
        if (i) text += ' ';
        text += kMockWords[splitmix64(state) % kMockWords.size()];
    }
    for (const auto& stop : request.stop) {
        auto pos = text.find(stop);
        if (pos != std::string::npos) {
            text = trim(text.substr(0, pos));
            reason = FinishReason::Stop;
        }
    }

    GenerationResult result;
    result.text = text;
    result.finish_reason = reason;
    result.token_count = whitespace_token_count(text);
    result.latency_ms = 0;
    return result;
}

ModelHandle MockBackend::finetune(const ModelHandle& handle,
                                  const std::vector<InstructionExample>& dataset,
                                  const AdapterParams& params) {
    if (dataset.empty()) throw DataError("fine-tune dataset is empty");
    const int stage = dataset.front().stage;
    std::string bytes;
    for (const auto& ex : dataset) {
        if (ex.stage != stage)
            throw DataError("fine-tune dataset mixes stages " + std::to_string(stage) + " and " +
                            std::to_string(ex.stage));
        bytes += ex.input_text;
        bytes += '\x1f';
        bytes += ex.target_text;
        bytes += '\x1e';
    }

    {
        std::lock_guard<std::mutex> lock(finetune_mutex_);
        if (!finetunes_in_flight_.insert(handle.model_id).second)
            throw BackendError(BackendError::Kind::Rejected,
                               "fine-tune already running for model " + handle.model_id);
    }

    StageDescriptor desc;
    desc.stage = stage;
    desc.task = dataset.front().meta.task;
    desc.dataset_digest = digest(bytes);
    desc.example_count = dataset.size();
    desc.seed = static_cast<std::uint64_t>(adapter_param_or(params, "shuffle_seed", 0));
    desc.epochs = static_cast<int>(adapter_param_or(params, "epochs", 0));

    ModelHandle next = handle;
    next.model_id = handle.model_id + "+s" + std::to_string(stage) + "-" +
                    desc.dataset_digest.substr(0, 8);
    next.stage_lineage.push_back(std::move(desc));
    for (const auto& [k, v] : params) next.adapter_params[k] = v;

    {
        std::lock_guard<std::mutex> lock(finetune_mutex_);
        finetunes_in_flight_.erase(handle.model_id);
    }
    return next;
}

int MockBackend::count_tokens(const std::string& text) const {
    return whitespace_token_count(text);
}

}  // namespace ercforge

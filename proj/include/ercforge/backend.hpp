// Model-backend abstraction: generation and fine-tuning as opaque
// capabilities. Implementations: deterministic mock, trainable toy linear
// model, JSON-over-HTTP remote client, and a recorded-fixture replayer.
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ercforge/prompting.hpp"

namespace ercforge {

struct GenerationRequest {
    std::string prompt;
    int max_new_tokens = 24;
    double temperature = 0.0;
    std::vector<std::string> stop;
    std::optional<std::uint64_t> seed;
};

enum class FinishReason { Stop, Length, Error };

const char* to_string(FinishReason reason);

struct GenerationResult {
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    int token_count = 0;
    int latency_ms = 0;
};

// One applied training stage, kept for provenance and reproducibility.
struct StageDescriptor {
    int stage = 0;
    std::string task;
    std::string dataset_digest;
    std::size_t example_count = 0;
    std::uint64_t seed = 0;
    int epochs = 0;
    std::vector<double> epoch_losses;  // toy backend records its loss curve
};

using AdapterParams = std::map<std::string, std::string>;

struct ModelHandle {
    std::string backend_id;
    std::string model_id;
    std::vector<StageDescriptor> stage_lineage;
    AdapterParams adapter_params;

    bool has_stage(int stage) const;
};

std::string handle_to_json(const ModelHandle& handle);
ModelHandle handle_from_json(const std::string& text);

double adapter_param_or(const AdapterParams& params, const std::string& key, double fallback);

class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string id() const = 0;
    virtual ModelHandle base_handle() const = 0;

    // Deterministic for temperature 0 and a fixed seed on local backends.
    virtual GenerationResult generate(const ModelHandle& handle,
                                      const GenerationRequest& request) = 0;

    // Returns a new handle with the stage appended; never mutates its input.
    // Rejects empty datasets, mixed stages, and concurrent fine-tunes of the
    // same handle.
    virtual ModelHandle finetune(const ModelHandle& handle,
                                 const std::vector<InstructionExample>& dataset,
                                 const AdapterParams& params) = 0;

    virtual int count_tokens(const std::string& text) const = 0;
};

// Deterministic stub: output text is a seeded hash of (prompt, backend seed);
// finetune is a lineage-recording no-op.
class MockBackend : public Backend {
public:
    explicit MockBackend(std::uint64_t seed = 0);

    std::string id() const override { return "mock"; }
    ModelHandle base_handle() const override;
    GenerationResult generate(const ModelHandle& handle,
                              const GenerationRequest& request) override;
    ModelHandle finetune(const ModelHandle& handle,
                         const std::vector<InstructionExample>& dataset,
                         const AdapterParams& params) override;
    int count_tokens(const std::string& text) const override;

    std::uint64_t generate_calls() const { return generate_calls_.load(); }

private:
    std::uint64_t seed_;
    std::atomic<std::uint64_t> generate_calls_{0};
    std::mutex finetune_mutex_;
    std::set<std::string> finetunes_in_flight_;
};

// Softmax-regression model over counts of closed-vocabulary tokens in the
// input. The vocabulary is the set of target first-tokens seen in training,
// so stages that share target tokens share parameters, and the masked loss
// reads nothing from input tokens outside that vocabulary.
class ToyBackend : public Backend {
public:
    // state_dir, when given, persists trained models as JSON for reuse
    // across processes.
    explicit ToyBackend(std::optional<std::filesystem::path> state_dir = std::nullopt);

    std::string id() const override { return "toy"; }
    ModelHandle base_handle() const override;
    GenerationResult generate(const ModelHandle& handle,
                              const GenerationRequest& request) override;
    ModelHandle finetune(const ModelHandle& handle,
                         const std::vector<InstructionExample>& dataset,
                         const AdapterParams& params) override;
    int count_tokens(const std::string& text) const override;

    // Mean masked NLL of the dataset under a trained model, at fixed
    // parameters. Test/diagnostic surface for the loss-mask property.
    double evaluate_loss(const ModelHandle& handle,
                         const std::vector<InstructionExample>& dataset) const;

    std::uint64_t generate_calls() const { return generate_calls_.load(); }

    struct State;

private:
    std::shared_ptr<const State> state_for(const std::string& model_id) const;

    std::optional<std::filesystem::path> state_dir_;
    mutable std::mutex models_mutex_;
    mutable std::map<std::string, std::shared_ptr<const State>> models_;
    std::atomic<std::uint64_t> generate_calls_{0};
    std::mutex finetune_mutex_;
    std::set<std::string> finetunes_in_flight_;
};

struct HttpBackendOptions {
    int max_attempts = 3;
    int backoff_initial_ms = 1000;  // doubles per retry; transport errors and 5xx only
    int poll_interval_ms = 1000;
    int timeout_sec = 30;
    std::optional<std::string> api_key;  // defaults to ERCFORGE_API_KEY
};

// Minimal completion-style JSON-over-HTTP client:
//   POST {base}/generate   -> {"text", "finish_reason"}
//   POST {base}/finetune   -> {"job_id"}
//   GET  {base}/jobs/{id}  -> {"status": running|done|failed, "model"?}
class HttpBackend : public Backend {
public:
    HttpBackend(std::string base_url, HttpBackendOptions options = {});

    std::string id() const override { return "http"; }
    ModelHandle base_handle() const override;
    GenerationResult generate(const ModelHandle& handle,
                              const GenerationRequest& request) override;
    ModelHandle finetune(const ModelHandle& handle,
                         const std::vector<InstructionExample>& dataset,
                         const AdapterParams& params) override;
    int count_tokens(const std::string& text) const override;

private:
    std::string base_url_;
    HttpBackendOptions options_;
    std::mutex finetune_mutex_;
    std::set<std::string> finetunes_in_flight_;
};

// Replays a persisted characteristic store: prompts are answered by digest
// lookup, so offline runs are byte-reproducible. Fine-tuning is unsupported.
class RecordedFixtureBackend : public Backend {
public:
    explicit RecordedFixtureBackend(const std::filesystem::path& store_path);

    std::string id() const override { return "fixture"; }
    ModelHandle base_handle() const override;
    GenerationResult generate(const ModelHandle& handle,
                              const GenerationRequest& request) override;
    ModelHandle finetune(const ModelHandle& handle,
                         const std::vector<InstructionExample>& dataset,
                         const AdapterParams& params) override;
    int count_tokens(const std::string& text) const override;

private:
    std::map<std::string, std::string> responses_by_prompt_digest_;
};

// Backend factory for CLI descriptors: "mock[:seed]", "toy[:state_dir]",
// "http:<base_url>", "fixture:<store.jsonl>".
std::unique_ptr<Backend> make_backend(const std::string& descriptor);

}  // namespace ercforge

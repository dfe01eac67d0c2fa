// Stage-dataset construction for the four ablation modes and two-stage
// training orchestration across seeds.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ercforge/backend.hpp"
#include "ercforge/characteristics.hpp"
#include "ercforge/corpus.hpp"
#include "ercforge/prompting.hpp"

namespace ercforge {

// woS: emotion stage only. wM: emotion stage only, generated characteristics
// appended to the input. wR: speaker identification first, then emotion.
// wS: characteristic injection first, then emotion.
enum class AblationMode { woS, wM, wR, wS };

const char* to_string(AblationMode mode);
AblationMode parse_ablation_mode(const std::string& name);
bool mode_has_stage1(AblationMode mode);

struct TrainingConfig {
    double learning_rate = 2e-4;
    int batch_size_stage1 = 8;
    int batch_size_stage2 = 16;
    int epochs_stage1 = 3;  // tuned on the dev split in practice
    int epochs_stage2 = 3;
    int window_size = 12;
    int input_budget = 1024;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    KeyElement key_element = KeyElement::oReact;
    int template_variant = 4;

    void validate() const;
};

struct StageDatasetSource {
    std::string corpus_id;
    std::string key_element;
    int variant_id = 0;
    std::string mode;
    int window_size = 0;
};

struct StageDataset {
    int stage = 0;
    std::vector<InstructionExample> examples;
    StageDatasetSource source;
    std::size_t excluded_count = 0;  // stage 1: records that failed validation unrepaired
};

// Stage 1 for mode wS: extraction prompt in, validated characteristic out,
// ordered by (conversation, index).
StageDataset build_stage1_dataset(const Corpus& corpus, const CharacteristicStore& store,
                                  const TemplateRegistry& registry, const TrainingConfig& config,
                                  const std::string& backend_id,
                                  const TokenCounter& count_tokens);

// Stage 2 for every mode: recognition prompt in, gold label out. The store is
// consulted only for mode wM.
StageDataset build_stage2_dataset(const Corpus& corpus, AblationMode mode,
                                  const CharacteristicStore* store,
                                  const TemplateRegistry& registry, const TrainingConfig& config,
                                  const std::string& backend_id,
                                  const TokenCounter& count_tokens);

// Stage 1 for mode wR: which speaker uttered the target.
StageDataset build_speaker_id_dataset(const Corpus& corpus, const TemplateRegistry& registry,
                                      const TrainingConfig& config,
                                      const TokenCounter& count_tokens);

struct SeedRun {
    std::uint64_t seed = 0;
    std::optional<ModelHandle> handle;  // absent when the seed failed
    std::string error;
    std::vector<std::string> stage_digests;
};

struct TrainingRun {
    AblationMode mode = AblationMode::woS;
    std::vector<SeedRun> seed_runs;

    std::vector<ModelHandle> handles() const;
};

// Per seed: optional stage 1 then stage 2, continuing the same handle.
// A backend failure aborts only that seed's run.
TrainingRun run_training(const Corpus& corpus_train, AblationMode mode, Backend& backend,
                         const CharacteristicStore* store, const TemplateRegistry& registry,
                         const TrainingConfig& config);

}  // namespace ercforge

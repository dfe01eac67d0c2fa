#include "ercforge/pipeline.hpp"

#include <algorithm>

#include "ercforge/context.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/hash.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

const char* to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::woS: return "woS";
        case AblationMode::wM: return "wM";
        case AblationMode::wR: return "wR";
        case AblationMode::wS: return "wS";
    }
    return "?";
}

AblationMode parse_ablation_mode(const std::string& name) {
    if (name == "woS") return AblationMode::woS;
    if (name == "wM") return AblationMode::wM;
    if (name == "wR") return AblationMode::wR;
    if (name == "wS") return AblationMode::wS;
    throw DataError("unknown ablation mode: " + name + " (expected woS|wM|wR|wS)");
}

bool mode_has_stage1(AblationMode mode) {
    return mode == AblationMode::wR || mode == AblationMode::wS;
}

void TrainingConfig::validate() const {
    if (learning_rate <= 0) throw DataError("learning_rate must be positive");
    if (batch_size_stage1 < 1 || batch_size_stage2 < 1)
        throw DataError("batch sizes must be positive");
    if (epochs_stage1 < 1 || epochs_stage2 < 1) throw DataError("epochs must be positive");
    if (window_size < 0) throw DataError("window_size must be >= 0");
    if (input_budget < 1) throw DataError("input_budget must be positive");
    if (seeds.empty()) throw DataError("at least one seed is required");
}

namespace {

std::vector<std::string> distinct_speakers(const Conversation& conv) {
    std::vector<std::string> speakers;
    for (const auto& u : conv.utterances)
        if (std::find(speakers.begin(), speakers.end(), u.speaker) == speakers.end())
            speakers.push_back(u.speaker);
    return speakers;
}

}  // namespace

StageDataset build_stage1_dataset(const Corpus& corpus, const CharacteristicStore& store,
                                  const TemplateRegistry& registry, const TrainingConfig& config,
                                  const std::string& backend_id,
                                  const TokenCounter& count_tokens) {
    config.validate();
    StageDataset dataset;
    dataset.stage = 1;
    dataset.source = {corpus.dataset_id, to_string(config.key_element), config.template_variant,
                      "wS", config.window_size};

    std::vector<std::string> missing;
    for (const auto& conv : corpus.conversations) {
        for (const auto& u : conv.utterances) {
            CharacteristicKey key{conv.conversation_id, u.index, to_string(config.key_element),
                                  config.template_variant, backend_id};
            auto record = store.find(key);
            if (!record) {
                missing.push_back(conv.conversation_id + "[" + std::to_string(u.index) + "]");
                continue;
            }
            ValidatedCharacteristic validated = validate_characteristic(record->text);
            if (!validated.ok) {
                ++dataset.excluded_count;
                continue;
            }
            DialogueWindow window = build_window(conv, u.index, config.window_size);
            InstructionExample ex = registry.render_injection_example(
                window, config.key_element, validated.normalized, config.template_variant);
            ex.input_text = truncate_to_budget(ex.input_text, config.input_budget, count_tokens);
            ex.mask_boundary = ex.input_text.size();
            ex.meta.dataset_id = corpus.dataset_id;
            dataset.examples.push_back(std::move(ex));
        }
    }
    if (!missing.empty()) {
        std::string what = "characteristic store is missing " + std::to_string(missing.size()) +
                           " record(s): ";
        for (std::size_t i = 0; i < missing.size() && i < 10; ++i) {
            if (i) what += ", ";
            what += missing[i];
        }
        if (missing.size() > 10) what += ", ...";
        throw DataError(what);
    }
    return dataset;
}

StageDataset build_stage2_dataset(const Corpus& corpus, AblationMode mode,
                                  const CharacteristicStore* store,
                                  const TemplateRegistry& registry, const TrainingConfig& config,
                                  const std::string& backend_id,
                                  const TokenCounter& count_tokens) {
    config.validate();
    if (mode == AblationMode::wM && store == nullptr)
        throw DataError("mode wM needs a characteristic store");

    StageDataset dataset;
    dataset.stage = 2;
    dataset.source = {corpus.dataset_id, to_string(config.key_element), config.template_variant,
                      to_string(mode), config.window_size};

    for (const auto& conv : corpus.conversations) {
        for (const auto& u : conv.utterances) {
            DialogueWindow window = build_window(conv, u.index, config.window_size);
            std::optional<std::vector<std::string>> characteristics;
            if (mode == AblationMode::wM) {
                CharacteristicKey key{conv.conversation_id, u.index,
                                      to_string(config.key_element), config.template_variant,
                                      backend_id};
                auto record = store->find(key);
                if (!record)
                    throw DataError("characteristic store is missing " + conv.conversation_id +
                                    "[" + std::to_string(u.index) + "]");
                characteristics = std::vector<std::string>{record->text};
            }
            InstructionExample ex = registry.render_recognition_example(
                window, corpus.label_space, characteristics, u.label);
            ex.input_text = truncate_to_budget(ex.input_text, config.input_budget, count_tokens);
            ex.mask_boundary = ex.input_text.size();
            ex.meta.dataset_id = corpus.dataset_id;
            dataset.examples.push_back(std::move(ex));
        }
    }
    return dataset;
}

StageDataset build_speaker_id_dataset(const Corpus& corpus, const TemplateRegistry& registry,
                                      const TrainingConfig& config,
                                      const TokenCounter& count_tokens) {
    config.validate();
    StageDataset dataset;
    dataset.stage = 1;
    dataset.source = {corpus.dataset_id, "", 0, "wR", config.window_size};

    for (const auto& conv : corpus.conversations) {
        const auto speakers = distinct_speakers(conv);
        for (const auto& u : conv.utterances) {
            DialogueWindow window = build_window(conv, u.index, config.window_size);
            InstructionExample ex =
                registry.render_speaker_id_example(window, speakers, u.speaker);
            ex.input_text = truncate_to_budget(ex.input_text, config.input_budget, count_tokens);
            ex.mask_boundary = ex.input_text.size();
            ex.meta.dataset_id = corpus.dataset_id;
            dataset.examples.push_back(std::move(ex));
        }
    }
    return dataset;
}

std::vector<ModelHandle> TrainingRun::handles() const {
    std::vector<ModelHandle> out;
    for (const auto& run : seed_runs)
        if (run.handle) out.push_back(*run.handle);
    return out;
}

TrainingRun run_training(const Corpus& corpus_train, AblationMode mode, Backend& backend,
                         const CharacteristicStore* store, const TemplateRegistry& registry,
                         const TrainingConfig& config) {
    config.validate();
    const auto counter = [&backend](const std::string& s) { return backend.count_tokens(s); };

    std::optional<StageDataset> stage1;
    if (mode == AblationMode::wS) {
        if (store == nullptr) throw DataError("mode wS needs a characteristic store");
        stage1 = build_stage1_dataset(corpus_train, *store, registry, config, backend.id(),
                                      counter);
    } else if (mode == AblationMode::wR) {
        stage1 = build_speaker_id_dataset(corpus_train, registry, config, counter);
    }
    StageDataset stage2 =
        build_stage2_dataset(corpus_train, mode, store, registry, config, backend.id(), counter);

    TrainingRun run;
    run.mode = mode;
    for (std::uint64_t seed : config.seeds) {
        SeedRun seed_run;
        seed_run.seed = seed;
        try {
            ModelHandle handle = backend.base_handle();
            if (stage1) {
                AdapterParams params;
                params["learning_rate"] = std::to_string(config.learning_rate);
                params["epochs"] = std::to_string(config.epochs_stage1);
                params["batch_size"] = std::to_string(config.batch_size_stage1);
                params["shuffle_seed"] = std::to_string(seed);
                handle = backend.finetune(handle, stage1->examples, params);
                seed_run.stage_digests.push_back(handle.stage_lineage.back().dataset_digest);
            }
            {
                AdapterParams params;
                params["learning_rate"] = std::to_string(config.learning_rate);
                params["epochs"] = std::to_string(config.epochs_stage2);
                params["batch_size"] = std::to_string(config.batch_size_stage2);
                params["shuffle_seed"] = std::to_string(seed);
                handle = backend.finetune(handle, stage2.examples, params);
                seed_run.stage_digests.push_back(handle.stage_lineage.back().dataset_digest);
            }
            seed_run.handle = std::move(handle);
        } catch (const std::exception& e) {
            seed_run.error = e.what();
        }
        run.seed_runs.push_back(std::move(seed_run));
    }
    return run;
}

}  // namespace ercforge

#include <doctest.h>

#include "ercforge/backend.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/evaluation.hpp"
#include "ercforge/pipeline.hpp"
#include "support.hpp"

using namespace ercforge;

namespace {

TrainingConfig toy_config(int window = 0) {
    TrainingConfig config;
    config.learning_rate = 0.4;
    config.epochs_stage1 = 6;
    config.epochs_stage2 = 2;
    config.window_size = window;
    config.seeds = {1, 2};
    return config;
}

const TokenCounter whitespace_counter = [](const std::string& s) {
    return whitespace_token_count(s);
};

}  // namespace

TEST_CASE("stage-1 datasets pair extraction prompts with stored characteristics") {
    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 1, 4);
    auto registry = ercforge::testing::load_registry();
    auto store = ercforge::testing::make_synthetic_store(corpus, KeyElement::oReact, 4, "mock");

    TrainingConfig config = toy_config(2);
    StageDataset dataset =
        build_stage1_dataset(corpus, store, registry, config, "mock", whitespace_counter);
    REQUIRE(dataset.examples.size() == 4);
    CHECK(dataset.stage == 1);
    CHECK(dataset.excluded_count == 0);
    for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
        const auto& ex = dataset.examples[i];
        CHECK(ex.stage == 1);
        CHECK(ex.meta.target_index == static_cast<int>(i));
        CHECK(ex.target_text ==
              store.find({ex.meta.conversation_id, ex.meta.target_index, "oReact", 4, "mock"})
                  ->text);
        CHECK(ex.mask_boundary == ex.input_text.size());
    }
}

TEST_CASE("stage-1 build uses the appendix record verbatim") {
    Corpus corpus;
    corpus.dataset_id = "appendix";
    corpus.split = "train";
    corpus.label_space = LabelSpace::make({"neutral", "happy"});
    Conversation conv = ercforge::testing::big_news_conversation();
    conv.utterances.resize(2);
    corpus.conversations = {conv};

    auto registry = ercforge::testing::load_registry();
    auto store = CharacteristicStore::load(ercforge::testing::test_dir() / "fixtures" /
                                           "appendix_store.jsonl");
    // The fixture covers only the second utterance.
    Corpus target_only = corpus;
    target_only.conversations[0].utterances.erase(
        target_only.conversations[0].utterances.begin());
    target_only.conversations[0].utterances[0].index = 0;

    TrainingConfig config = toy_config(12);
    CHECK_THROWS_WITH_AS(static_cast<void>(build_stage1_dataset(corpus, store, registry, config,
                                                                "fixture", whitespace_counter)),
                         doctest::Contains("appendix/bignews[0]"), DataError);

    // With a complete store the target pair carries the recorded text.
    CharacteristicRecord filler;
    filler.conversation_id = "appendix/bignews";
    filler.target_index = 0;
    filler.key_element = "oReact";
    filler.variant_id = 4;
    filler.backend_id = "fixture";
    filler.prompt_hash = "0";
    filler.text = "Listener waits politely";
    filler.word_count = 3;
    store.upsert(filler);
    StageDataset dataset =
        build_stage1_dataset(corpus, store, registry, config, "fixture", whitespace_counter);
    REQUIRE(dataset.examples.size() == 2);
    CHECK(dataset.examples[1].target_text == "Listener looks surprised and excited.");
}

TEST_CASE("stage-1 excludes unrepairable records and reports the count") {
    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 1, 3);
    auto registry = ercforge::testing::load_registry();
    auto store = ercforge::testing::make_synthetic_store(corpus, KeyElement::oReact, 4, "mock");
    CharacteristicRecord empty;
    empty.conversation_id = "custom/conv0";
    empty.target_index = 1;
    empty.key_element = "oReact";
    empty.variant_id = 4;
    empty.backend_id = "mock";
    empty.prompt_hash = "0";
    empty.text = "   ";
    empty.word_count = 0;
    store.upsert(empty);

    StageDataset dataset = build_stage1_dataset(corpus, store, registry, toy_config(1), "mock",
                                                whitespace_counter);
    CHECK(dataset.examples.size() == 2);
    CHECK(dataset.excluded_count == 1);
}

TEST_CASE("stage-2 datasets differ across modes only where specified") {
    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 2, 3);
    auto registry = ercforge::testing::load_registry();
    auto store = ercforge::testing::make_synthetic_store(corpus, KeyElement::oReact, 4, "mock");
    TrainingConfig config = toy_config(2);

    StageDataset wos = build_stage2_dataset(corpus, AblationMode::woS, nullptr, registry, config,
                                            "mock", whitespace_counter);
    StageDataset ws = build_stage2_dataset(corpus, AblationMode::wS, nullptr, registry, config,
                                           "mock", whitespace_counter);
    StageDataset wr = build_stage2_dataset(corpus, AblationMode::wR, nullptr, registry, config,
                                           "mock", whitespace_counter);
    StageDataset wm = build_stage2_dataset(corpus, AblationMode::wM, &store, registry, config,
                                           "mock", whitespace_counter);

    CHECK(wos.examples.size() == corpus.utterance_count());
    CHECK(wm.examples.size() == corpus.utterance_count());
    // Modes that differ only in stage 1 share the stage-2 dataset bytes.
    CHECK(examples_to_jsonl(wos.examples) == examples_to_jsonl(ws.examples));
    CHECK(examples_to_jsonl(wos.examples) == examples_to_jsonl(wr.examples));
    CHECK(examples_to_jsonl(wos.examples) != examples_to_jsonl(wm.examples));

    for (std::size_t i = 0; i < wos.examples.size(); ++i) {
        CHECK(wos.examples[i].input_text.find("The listener's reaction:") == std::string::npos);
        CHECK(wm.examples[i].input_text.find("The listener's reaction:") != std::string::npos);
        CHECK(wos.examples[i].target_text == wm.examples[i].target_text);
        CHECK(wos.examples[i].stage == 2);
    }

    CHECK_THROWS_AS(
        static_cast<void>(build_stage2_dataset(corpus, AblationMode::wM, nullptr, registry,
                                               config, "mock", whitespace_counter)),
        DataError);

    StageDataset again = build_stage2_dataset(corpus, AblationMode::woS, nullptr, registry,
                                              config, "mock", whitespace_counter);
    CHECK(examples_to_jsonl(again.examples) == examples_to_jsonl(wos.examples));
}

TEST_CASE("speaker-identification datasets target the canonical speaker") {
    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 1, 4);
    auto registry = ercforge::testing::load_registry();
    StageDataset dataset =
        build_speaker_id_dataset(corpus, registry, toy_config(2), whitespace_counter);
    REQUIRE(dataset.examples.size() == 4);
    for (const auto& ex : dataset.examples) {
        CHECK(ex.stage == 1);
        CHECK(ex.meta.task == "speaker_identification");
        CHECK(ex.target_text == (ex.meta.target_index % 2 == 0 ? "Speaker0" : "Speaker1"));
    }

    Corpus solo = ercforge::testing::tiny_corpus("solo", "train", {"a", "b"}, 1, 3);
    for (auto& u : solo.conversations[0].utterances) u.speaker = "Speaker0";
    StageDataset solo_dataset =
        build_speaker_id_dataset(solo, registry, toy_config(2), whitespace_counter);
    for (const auto& ex : solo_dataset.examples) CHECK(ex.target_text == "Speaker0");
}

TEST_CASE("run_training lineage reflects the mode's stages") {
    ercforge::testing::SyntheticParams params;
    params.n_conversations = 20;
    params.conversation_len = 4;
    Corpus corpus = ercforge::testing::make_synthetic_corpus("train", params);
    auto registry = ercforge::testing::load_registry();
    auto store = ercforge::testing::make_synthetic_store(corpus, KeyElement::oReact, 4, "toy");
    TrainingConfig config = toy_config();
    config.seeds = {7};

    ToyBackend toy;
    auto ws = run_training(corpus, AblationMode::wS, toy, &store, registry, config);
    REQUIRE(ws.handles().size() == 1);
    REQUIRE(ws.handles()[0].stage_lineage.size() == 2);
    CHECK(ws.handles()[0].stage_lineage[0].stage == 1);
    CHECK(ws.handles()[0].stage_lineage[0].task == "characteristic_injection");
    CHECK(ws.handles()[0].stage_lineage[1].stage == 2);
    CHECK(ws.handles()[0].has_stage(1));

    auto wos = run_training(corpus, AblationMode::woS, toy, nullptr, registry, config);
    REQUIRE(wos.handles().size() == 1);
    REQUIRE(wos.handles()[0].stage_lineage.size() == 1);
    CHECK(wos.handles()[0].stage_lineage[0].stage == 2);

    auto wr = run_training(corpus, AblationMode::wR, toy, nullptr, registry, config);
    REQUIRE(wr.handles()[0].stage_lineage.size() == 2);
    CHECK(wr.handles()[0].stage_lineage[0].task == "speaker_identification");

    CHECK_THROWS_AS(
        static_cast<void>(run_training(corpus, AblationMode::wS, toy, nullptr, registry, config)),
        DataError);
}

TEST_CASE("a failing backend aborts only its own seed") {
    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 2, 3);
    auto registry = ercforge::testing::load_registry();

    struct FlakyBackend : ercforge::testing::ScriptedBackend {
        int finetune_calls = 0;
        ModelHandle finetune(const ModelHandle& handle,
                             const std::vector<InstructionExample>& dataset,
                             const AdapterParams& params) override {
            if (++finetune_calls == 2)
                throw BackendError(BackendError::Kind::JobFailed, "flaky");
            ModelHandle next = handle;
            StageDescriptor desc;
            desc.stage = dataset.front().stage;
            desc.seed = static_cast<std::uint64_t>(
                adapter_param_or(params, "shuffle_seed", 0));
            next.stage_lineage.push_back(desc);
            next.model_id += "+s";
            return next;
        }
    } backend;

    TrainingConfig config = toy_config(1);
    config.seeds = {1, 2, 3};
    auto run = run_training(corpus, AblationMode::woS, backend, nullptr, registry, config);
    REQUIRE(run.seed_runs.size() == 3);
    CHECK(run.seed_runs[0].handle.has_value());
    CHECK_FALSE(run.seed_runs[1].handle.has_value());
    CHECK(run.seed_runs[1].error.find("flaky") != std::string::npos);
    CHECK(run.seed_runs[2].handle.has_value());
    CHECK(run.handles().size() == 2);
}

TEST_CASE("two-stage injection beats the one-stage baseline on synthetic data") {
    ercforge::testing::SyntheticParams params;
    params.n_conversations = 90;
    params.conversation_len = 6;
    params.seed = 21;
    Corpus train = ercforge::testing::make_synthetic_corpus("train", params);
    params.seed = 22;
    Corpus test = ercforge::testing::make_synthetic_corpus("test", params);

    auto registry = ercforge::testing::load_registry();
    auto store = ercforge::testing::make_synthetic_store(train, KeyElement::oReact, 4, "toy");
    TrainingConfig config = toy_config();
    config.epochs_stage2 = 1;
    config.learning_rate = 0.25;
    config.seeds = {11, 12};

    ToyBackend toy;
    auto ws = run_training(train, AblationMode::wS, toy, &store, registry, config);
    auto wos = run_training(train, AblationMode::woS, toy, nullptr, registry, config);

    double ws_mean = 0, wos_mean = 0;
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        ws_mean += weighted_f1(
            predict_labels(test, ws.handles()[i], toy, registry, config));
        wos_mean += weighted_f1(
            predict_labels(test, wos.handles()[i], toy, registry, config));
    }
    ws_mean /= static_cast<double>(config.seeds.size());
    wos_mean /= static_cast<double>(config.seeds.size());
    CHECK(ws_mean > wos_mean);
}

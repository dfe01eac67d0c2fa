#include <doctest.h>

#include <filesystem>

#include "ercforge/backend.hpp"
#include "ercforge/characteristics.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/io.hpp"
#include "support.hpp"

using namespace ercforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / "ercforge-char-tests";
    fs::create_directories(dir);
    return dir / name;
}

ExtractionConfig small_config() {
    ExtractionConfig config;
    config.window_size = 4;
    config.parallelism = 2;
    return config;
}

}  // namespace

TEST_CASE("validate_characteristic normalizes and enforces ten words") {
    auto v = validate_characteristic("Expecting explanation or clarification");
    CHECK(v.ok);
    CHECK(v.word_count == 4);
    CHECK(v.normalized == "Expecting explanation or clarification");

    v = validate_characteristic(
        "this rambling response keeps going and going well past the permitted limit here");
    CHECK_FALSE(v.ok);
    CHECK(v.word_count == 14);

    v = validate_characteristic("  Surprised.  ");
    CHECK(v.ok);
    CHECK(v.normalized == "Surprised.");

    v = validate_characteristic("\"Listener   looks  calm\"");
    CHECK(v.ok);
    CHECK(v.normalized == "Listener looks calm");
    CHECK(v.word_count == 3);

    v = validate_characteristic("   ");
    CHECK_FALSE(v.ok);
    CHECK(v.normalized.empty());
}

TEST_CASE("extraction covers every utterance and caches on rerun") {
    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 1, 4);
    auto registry = ercforge::testing::load_registry();
    MockBackend mock(3);
    CharacteristicStore store;

    auto report = extract_corpus_characteristics(corpus, KeyElement::oReact,
                                                 registry.variant(4), mock, registry, store,
                                                 small_config());
    CHECK(store.size() == 4);
    CHECK(report.generated == 4);
    CHECK(report.cache_hits == 0);
    CHECK(report.failed == 0);
    const auto calls_after_first = mock.generate_calls();

    auto rerun = extract_corpus_characteristics(corpus, KeyElement::oReact, registry.variant(4),
                                                mock, registry, store, small_config());
    CHECK(mock.generate_calls() == calls_after_first);  // full cache hit
    CHECK(rerun.generated == 0);
    CHECK(rerun.cache_hits == 4);
    CHECK(store.size() == 4);
}

TEST_CASE("backend failures go to the sidecar without aborting the batch") {
    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 1, 4);
    auto registry = ercforge::testing::load_registry();
    ercforge::testing::ScriptedBackend backend;
    backend.fallback = "calm and collected";
    backend.fail_on_call = {2};
    CharacteristicStore store;

    ExtractionConfig config = small_config();
    config.parallelism = 1;
    auto report = extract_corpus_characteristics(corpus, KeyElement::oReact,
                                                 registry.variant(4), backend, registry, store,
                                                 config);
    CHECK(report.generated == 3);
    CHECK(report.failed == 1);
    CHECK(store.size() == 3);
    REQUIRE(store.failures().size() == 1);
    CHECK(store.failures()[0].error == "scripted failure");

    auto path = temp_path("failing_store.jsonl");
    store.save(path);
    CHECK(fs::exists(path));
    CHECK(fs::exists(temp_path("failing_store.jsonl.errors.jsonl")));
}

TEST_CASE("over-length generations are truncated and flagged, never dropped") {
    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 1, 3);
    auto registry = ercforge::testing::load_registry();
    ercforge::testing::ScriptedBackend backend;
    backend.fallback = "one two three four five six seven eight nine ten eleven twelve";
    CharacteristicStore store;

    auto report = extract_corpus_characteristics(corpus, KeyElement::xIntent,
                                                 registry.variant(4), backend, registry, store,
                                                 small_config());
    CHECK(report.flagged == 3);
    CHECK(report.failed == 0);
    CHECK(store.size() == 3);
    for (const auto& record : store.sorted_records()) {
        CHECK(record.flagged);
        CHECK(record.word_count == 10);
        CHECK(record.text == "one two three four five six seven eight nine ten");
    }
}

TEST_CASE("store persists sorted and replays byte-identically") {
    CharacteristicStore store;
    // Deliberately shuffled upsert order.
    for (const auto& [conv, idx, element] :
         std::vector<std::tuple<std::string, int, std::string>>{
             {"b/conv", 1, "oReact"}, {"a/conv", 2, "oReact"}, {"a/conv", 0, "xIntent"},
             {"a/conv", 0, "oReact"}, {"b/conv", 0, "oReact"}}) {
        CharacteristicRecord r;
        r.conversation_id = conv;
        r.target_index = idx;
        r.key_element = element;
        r.variant_id = 4;
        r.backend_id = "mock";
        r.prompt_hash = "0000000000000000";
        r.text = "calm";
        r.word_count = 1;
        store.upsert(std::move(r));
    }
    auto records = store.sorted_records();
    REQUIRE(records.size() == 5);
    CHECK(records[0].conversation_id == "a/conv");
    CHECK(records[0].target_index == 0);
    CHECK(records[0].key_element == "oReact");
    CHECK(records[1].key_element == "xIntent");
    CHECK(records[2].target_index == 2);
    CHECK(records[3].conversation_id == "b/conv");

    auto path = temp_path("sorted_store.jsonl");
    store.save(path);
    CharacteristicStore loaded = CharacteristicStore::load(path);
    CHECK(loaded.to_jsonl() == store.to_jsonl());

    // Upserting an existing key replaces, not duplicates.
    CharacteristicRecord replacement;
    replacement.conversation_id = "a/conv";
    replacement.target_index = 0;
    replacement.key_element = "oReact";
    replacement.variant_id = 4;
    replacement.backend_id = "mock";
    replacement.prompt_hash = "1111111111111111";
    replacement.text = "uneasy";
    replacement.word_count = 1;
    store.upsert(replacement);
    CHECK(store.size() == 5);
    CHECK(store
              .find({"a/conv", 0, "oReact", 4, "mock"})
              ->text == "uneasy");
}

TEST_CASE("the recorded fixture backend replays the appendix characteristics") {
    Corpus corpus;
    corpus.dataset_id = "appendix";
    corpus.split = "test";
    corpus.label_space = LabelSpace::make({"neutral", "happy"});
    corpus.conversations = {ercforge::testing::big_news_conversation()};

    auto registry = ercforge::testing::load_registry();
    RecordedFixtureBackend fixture(ercforge::testing::test_dir() / "fixtures" /
                                   "appendix_store.jsonl");

    ExtractionConfig config;
    config.window_size = 12;
    config.parallelism = 1;
    CharacteristicStore store;
    auto report = extract_corpus_characteristics(corpus, KeyElement::oReact,
                                                 registry.variant(4), fixture, registry, store,
                                                 config);
    // Only the second utterance's prompt is recorded; the first lands in the
    // failure sidecar instead of aborting.
    CHECK(report.generated == 1);
    CHECK(report.failed == 1);
    auto record = store.find({"appendix/bignews", 1, "oReact", 4, "fixture"});
    REQUIRE(record.has_value());
    CHECK(record->text == "Listener looks surprised and excited.");

    // Two full extractions against the fixture produce byte-identical stores.
    CharacteristicStore replay;
    static_cast<void>(extract_corpus_characteristics(corpus, KeyElement::oReact,
                                                     registry.variant(4), fixture, registry,
                                                     replay, config));
    CHECK(replay.to_jsonl() == store.to_jsonl());
}

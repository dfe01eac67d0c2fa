#include <doctest.h>

#include <regex>

#include "ercforge/context.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/io.hpp"
#include "ercforge/prompting.hpp"
#include "ercforge/strings.hpp"
#include "support.hpp"

using namespace ercforge;
using ercforge::testing::big_news_conversation;
using ercforge::testing::esmeralda_conversation;
using ercforge::testing::load_registry;

namespace {

int count_occurrences(const std::string& haystack, const std::string& needle) {
    int n = 0;
    std::size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

// One delimited conversation block (ignoring the quoted '### ###' mention in
// the scaffold) and one angle-bracket slot per extraction prompt.
void check_prompt_shape(const std::string& text, int expected_slots) {
    std::string stripped = text;
    const std::string marker = "'### ###'";
    auto pos = stripped.find(marker);
    REQUIRE(pos != std::string::npos);
    stripped.erase(pos, marker.size());
    static const std::regex block_re("### .+ ###");
    auto begin = std::sregex_iterator(stripped.begin(), stripped.end(), block_re);
    CHECK(std::distance(begin, std::sregex_iterator()) == 1);
    CHECK(count_occurrences(text, "<") == expected_slots);
    CHECK(count_occurrences(text, ">") == expected_slots);
}

}  // namespace

TEST_CASE("registry exposes the nine elements and four variants") {
    auto registry = load_registry();
    CHECK(registry.variant_ids() == std::vector<int>{1, 2, 3, 4});
    CHECK(registry.variant(4).phrase(KeyElement::oReact) ==
          "the reaction of potential listeners");
    CHECK(registry.variant(3).phrase(KeyElement::oReact) == "the oReact of listeners");
    CHECK_THROWS_AS(registry.variant(9), DataError);

    CHECK(category_of(KeyElement::oReact) == ElementCategory::MentalState);
    CHECK(category_of(KeyElement::xReact) == ElementCategory::MentalState);
    CHECK(category_of(KeyElement::xIntent) == ElementCategory::MentalState);
    CHECK(category_of(KeyElement::xWant) == ElementCategory::Event);
    CHECK(category_of(KeyElement::oWant) == ElementCategory::Event);
    CHECK(category_of(KeyElement::xEffect) == ElementCategory::Event);
    CHECK(category_of(KeyElement::oEffect) == ElementCategory::Event);
    CHECK(category_of(KeyElement::xNeed) == ElementCategory::Event);
    CHECK(category_of(KeyElement::xAttr) == ElementCategory::Persona);
    for (KeyElement e : kAllKeyElements) CHECK(parse_key_element(to_string(e)) == e);
    CHECK_THROWS_AS(parse_key_element("zzz"), DataError);
}

TEST_CASE("extraction prompts match the golden fixtures") {
    auto registry = load_registry();
    DialogueWindow wa = build_window(big_news_conversation(), 1, 12);
    for (KeyElement e : kAllKeyElements) {
        auto prompt = registry.render_extraction_prompt(wa, e, 4);
        const std::string golden = slurp_file(ercforge::testing::test_dir() / "golden" /
                                              ("relation_" + std::string(to_string(e)) + ".txt"));
        CHECK_MESSAGE(prompt.text == golden, "relation ", to_string(e));
    }
    DialogueWindow wb = build_window(esmeralda_conversation(), 3, 12);
    for (int v = 1; v <= 4; ++v) {
        auto prompt = registry.render_extraction_prompt(wb, KeyElement::oReact, v);
        const std::string golden = slurp_file(ercforge::testing::test_dir() / "golden" /
                                              ("template_" + std::to_string(v) + ".txt"));
        CHECK_MESSAGE(prompt.text == golden, "variant ", v);
    }
}

TEST_CASE("extraction prompt endings and provenance") {
    auto registry = load_registry();
    DialogueWindow wa = build_window(big_news_conversation(), 1, 12);
    auto oreact = registry.render_extraction_prompt(wa, KeyElement::oReact, 4);
    const std::string expected_tail =
        "infer the reaction of potential listeners in <Speaker0:\"What?\"> "
        "in no more than ten words of output :";
    CHECK(oreact.text.size() >= expected_tail.size());
    CHECK(oreact.text.substr(oreact.text.size() - expected_tail.size()) == expected_tail);
    CHECK(oreact.provenance.conversation_id == "appendix/bignews");
    CHECK(oreact.provenance.target_index == 1);
    CHECK(oreact.provenance.key_element == "oReact");
    CHECK(oreact.provenance.variant_id == 4);
    CHECK(oreact.token_estimate == whitespace_token_count(oreact.text));

    auto xintent = registry.render_extraction_prompt(wa, KeyElement::xIntent, 4);
    CHECK(xintent.text.find("infer the intention of <Speaker0:\"What?\">") != std::string::npos);
}

TEST_CASE("every extraction prompt has one block and one slot") {
    auto registry = load_registry();
    DialogueWindow wb = build_window(esmeralda_conversation(), 3, 12);
    for (KeyElement e : kAllKeyElements)
        for (int v = 1; v <= 4; ++v)
            check_prompt_shape(registry.render_extraction_prompt(wb, e, v).text, 1);
}

TEST_CASE("injection examples pair the extraction prompt with the characteristic") {
    auto registry = load_registry();
    DialogueWindow wa = build_window(big_news_conversation(), 1, 12);
    InstructionExample ex = registry.render_injection_example(
        wa, KeyElement::oReact, "Listener looks surprised and excited.", 4);
    CHECK(ex.stage == 1);
    CHECK(ex.target_text == "Listener looks surprised and excited.");
    CHECK(ex.mask_boundary == ex.input_text.size());
    CHECK(ex.input_text == registry.render_extraction_prompt(wa, KeyElement::oReact, 4).text);
    CHECK(ex.meta.task == "characteristic_injection");

    CHECK_THROWS_AS(
        static_cast<void>(registry.render_injection_example(wa, KeyElement::oReact, "  ", 4)),
        DataError);
}

TEST_CASE("recognition examples carry the label constraint") {
    auto registry = load_registry();
    const LabelSpace iemocap = *builtin_label_space("iemocap");
    DialogueWindow wa = build_window(big_news_conversation(), 1, 12);

    InstructionExample ex =
        registry.render_recognition_example(wa, iemocap, std::nullopt, std::string("sad"));
    CHECK(ex.stage == 2);
    CHECK(ex.target_text == "sad");
    const std::string tail = "from <neutral, happy, sad, excited, angry, frustrated> :";
    CHECK(ex.input_text.substr(ex.input_text.size() - tail.size()) == tail);
    CHECK(ex.input_text.find("reaction:") == std::string::npos);
    CHECK(ex.input_text.find("Now you are an assistant skilled in sentiment and emotion "
                             "analysis.") == 0);
    check_prompt_shape(ex.input_text, 2);  // target slot + label constraint

    CHECK_THROWS_AS(static_cast<void>(registry.render_recognition_example(
                        wa, iemocap, std::nullopt, std::string("bored"))),
                    DataError);

    InstructionExample inference =
        registry.render_recognition_example(wa, iemocap, std::nullopt, std::nullopt);
    CHECK(inference.target_text.empty());
    CHECK(inference.input_text == ex.input_text);

    std::vector<std::string> characteristics = {"Listener looks surprised and excited."};
    InstructionExample with = registry.render_recognition_example(
        wa, iemocap, characteristics, std::string("sad"));
    CHECK(with.input_text.find(
              "The listener's reaction: Listener looks surprised and excited.\n") !=
          std::string::npos);
}

TEST_CASE("speaker-identification examples do not leak the answer") {
    auto registry = load_registry();
    DialogueWindow wa = build_window(big_news_conversation(), 1, 12);
    InstructionExample ex = registry.render_speaker_id_example(
        wa, {"Speaker0", "Speaker1"}, std::string("Speaker0"));
    CHECK(ex.stage == 1);
    CHECK(ex.target_text == "Speaker0");
    CHECK(ex.input_text.find("<\"What?\">") != std::string::npos);
    CHECK(ex.input_text.find("<Speaker0:") == std::string::npos);
    CHECK(ex.input_text.find("from <Speaker0, Speaker1> :") != std::string::npos);
    // The block holds history only, so the target's own line is absent.
    CHECK(ex.input_text.find("### Speaker1:\"Okay, so big news.\" ###") != std::string::npos);

    CHECK_THROWS_AS(static_cast<void>(registry.render_speaker_id_example(
                        wa, {"Speaker0", "Speaker1"}, std::string("Speaker9"))),
                    DataError);
}

TEST_CASE("truncate_to_budget drops oldest history only") {
    auto registry = load_registry();
    const auto counter = [](const std::string& s) { return whitespace_token_count(s); };

    Corpus corpus = ercforge::testing::tiny_corpus("custom", "train", {"a", "b"}, 1, 30);
    Conversation conv = corpus.conversations[0];
    for (auto& u : conv.utterances)
        u.text = "this utterance rambles on for quite a few tokens number " +
                 std::to_string(u.index);
    DialogueWindow window = build_window(conv, 29, 28);
    auto prompt = registry.render_extraction_prompt(window, KeyElement::oReact, 4);

    SUBCASE("under budget is identity") {
        CHECK(truncate_to_budget(prompt.text, 10000, counter) == prompt.text);
    }

    SUBCASE("over budget keeps the target slot and newest history") {
        const int budget = 120;
        REQUIRE(counter(prompt.text) > budget);
        std::string cut = truncate_to_budget(prompt.text, budget, counter);
        CHECK(counter(cut) <= budget);
        CHECK(cut.find("<Speaker1:\"this utterance rambles on for quite a few tokens number "
                       "29\">") != std::string::npos);
        // Oldest history utterance is gone, newest remains.
        CHECK(cut.find("number 1\"") == std::string::npos);
        CHECK(cut.find("number 28\"") != std::string::npos);
        CHECK(truncate_to_budget(cut, budget, counter) == cut);  // idempotent
    }

    SUBCASE("irreducible prompts raise") {
        DialogueWindow bare = build_window(conv, 0, 0);
        auto small = registry.render_extraction_prompt(bare, KeyElement::oReact, 4);
        CHECK_THROWS_WITH_AS(static_cast<void>(truncate_to_budget(small.text, 5, counter)),
                             doctest::Contains("irreducible"), DataError);
    }
}

TEST_CASE("instruction datasets round-trip through JSONL") {
    auto registry = load_registry();
    DialogueWindow wa = build_window(big_news_conversation(), 1, 12);
    std::vector<InstructionExample> examples;
    examples.push_back(registry.render_injection_example(wa, KeyElement::oReact,
                                                         "Listener looks surprised.", 4));
    examples.push_back(registry.render_recognition_example(
        wa, *builtin_label_space("iemocap"), std::nullopt, std::string("sad")));

    const std::string jsonl = examples_to_jsonl(examples);
    auto parsed = examples_from_jsonl(jsonl);
    REQUIRE(parsed.size() == examples.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].input_text == examples[i].input_text);
        CHECK(parsed[i].target_text == examples[i].target_text);
        CHECK(parsed[i].stage == examples[i].stage);
        CHECK(parsed[i].mask_boundary == examples[i].mask_boundary);
        CHECK(parsed[i].meta.task == examples[i].meta.task);
    }
    CHECK(examples_to_jsonl(parsed) == jsonl);
}

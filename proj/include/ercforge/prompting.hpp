// Template registry: the nine commonsense-relation extraction prompts, the
// four template variants, the stage-1 injection form, the stage-2 emotion
// question, the speaker-identification question, and input-budget truncation.
// Template text lives in editable files; see data/templates/.
#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ercforge/context.hpp"
#include "ercforge/corpus.hpp"

namespace ercforge {

enum class KeyElement {
    xIntent,
    xReact,
    oReact,
    xWant,
    oWant,
    xEffect,
    oEffect,
    xNeed,
    xAttr,
};

enum class ElementCategory { MentalState, Event, Persona };

constexpr std::array<KeyElement, 9> kAllKeyElements = {
    KeyElement::xIntent, KeyElement::xReact, KeyElement::oReact,
    KeyElement::xWant,   KeyElement::oWant,  KeyElement::xEffect,
    KeyElement::oEffect, KeyElement::xNeed,  KeyElement::xAttr,
};

const char* to_string(KeyElement element);
KeyElement parse_key_element(const std::string& name);
ElementCategory category_of(KeyElement element);

struct TemplateVariant {
    int variant_id = 4;
    std::map<KeyElement, std::string> phrase_map;  // bare relation phrases
    bool includes_history_preamble = true;
    bool includes_length_constraint = true;

    const std::string& phrase(KeyElement element) const;
};

struct PromptProvenance {
    std::string conversation_id;
    int target_index = 0;
    std::string key_element;
    int variant_id = 0;
};

struct RenderedPrompt {
    std::string text;
    int token_estimate = 0;  // whitespace tokens
    PromptProvenance provenance;
};

struct ExampleMeta {
    std::string conversation_id;
    int target_index = 0;
    std::string dataset_id;
    std::string task;  // characteristic_injection | speaker_identification | emotion_recognition
    std::string key_element;
    int variant_id = 0;
};

// One instruction-tuning pair. Under the concatenation input_text||target_text
// the loss-bearing region starts at mask_boundary == |input_text|.
struct InstructionExample {
    std::string input_text;
    std::string target_text;
    std::size_t mask_boundary = 0;
    int stage = 0;  // 1 or 2
    ExampleMeta meta;
};

using TokenCounter = std::function<int(const std::string&)>;

class TemplateRegistry {
public:
    // Loads manifest.json plus the template files it names.
    static TemplateRegistry load(const std::filesystem::path& directory);

    const TemplateVariant& variant(int variant_id) const;
    std::vector<int> variant_ids() const;

    // Extraction prompt. The conversation block holds history plus the target
    // utterance; the <...> slot repeats the target.
    RenderedPrompt render_extraction_prompt(const DialogueWindow& window, KeyElement element,
                                            const TemplateVariant& variant) const;
    RenderedPrompt render_extraction_prompt(const DialogueWindow& window, KeyElement element,
                                            int variant_id) const;

    // Stage-1 pair: extraction prompt as input, characteristic as target.
    InstructionExample render_injection_example(const DialogueWindow& window, KeyElement element,
                                                const std::string& characteristic,
                                                int variant_id) const;

    // Stage-2 pair (or inference prompt when gold is absent). Characteristic
    // lines are inserted only for the mode that feeds generated text straight
    // into the emotion stage.
    InstructionExample render_recognition_example(
        const DialogueWindow& window, const LabelSpace& label_space,
        const std::optional<std::vector<std::string>>& characteristics,
        const std::optional<std::string>& gold) const;

    // Auxiliary stage-1 pair asking which speaker uttered the target. The
    // target is rendered without its speaker prefix and kept out of the
    // conversation block so the answer is not leaked.
    InstructionExample render_speaker_id_example(const DialogueWindow& window,
                                                 const std::vector<std::string>& speakers,
                                                 const std::optional<std::string>& gold) const;

private:
    std::string extraction_template_;
    std::string recognition_template_;
    std::string speaker_id_template_;
    std::map<KeyElement, std::string> connectors_;
    std::map<int, TemplateVariant> variants_;
};

// Drops whole utterances from the oldest end of the '### ... ###' block until
// the token count fits. Scaffolding and the <...> target slot are never cut;
// an over-budget prompt with an empty droppable history is an error.
std::string truncate_to_budget(const std::string& text, int budget,
                               const TokenCounter& count_tokens);

// Instruction-dataset wire format, one example per line:
// {"input": str, "target": str, "stage": int, "meta": {...}}
std::string examples_to_jsonl(const std::vector<InstructionExample>& examples);
std::vector<InstructionExample> examples_from_jsonl(const std::string& text);

}  // namespace ercforge

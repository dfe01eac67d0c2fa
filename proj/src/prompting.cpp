#include "ercforge/prompting.hpp"

#include <algorithm>
#include <cctype>

#include <json.hpp>

#include "ercforge/errors.hpp"
#include "ercforge/io.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

using nlohmann::json;

const char* to_string(KeyElement element) {
    switch (element) {
        case KeyElement::xIntent: return "xIntent";
        case KeyElement::xReact: return "xReact";
        case KeyElement::oReact: return "oReact";
        case KeyElement::xWant: return "xWant";
        case KeyElement::oWant: return "oWant";
        case KeyElement::xEffect: return "xEffect";
        case KeyElement::oEffect: return "oEffect";
        case KeyElement::xNeed: return "xNeed";
        case KeyElement::xAttr: return "xAttr";
    }
    return "?";
}

KeyElement parse_key_element(const std::string& name) {
    for (KeyElement e : kAllKeyElements)
        if (name == to_string(e)) return e;
    throw DataError("unknown key element: " + name);
}

ElementCategory category_of(KeyElement element) {
    switch (element) {
        case KeyElement::xIntent:
        case KeyElement::xReact:
        case KeyElement::oReact:
            return ElementCategory::MentalState;
        case KeyElement::xWant:
        case KeyElement::oWant:
        case KeyElement::xEffect:
        case KeyElement::oEffect:
        case KeyElement::xNeed:
            return ElementCategory::Event;
        case KeyElement::xAttr:
            return ElementCategory::Persona;
    }
    throw DataError("unknown key element");
}

const std::string& TemplateVariant::phrase(KeyElement element) const {
    auto it = phrase_map.find(element);
    if (it == phrase_map.end())
        throw DataError(std::string("variant ") + std::to_string(variant_id) +
                        " has no phrase for " + to_string(element));
    return it->second;
}

namespace {

// Single-pass {name} substitution; inserted values are not re-scanned.
std::string substitute(const std::string& tmpl,
                       const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size() + 64);
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close != std::string::npos) {
                std::string name = tmpl.substr(i + 1, close - i - 1);
                auto it = values.find(name);
                if (it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

std::string load_template_file(const std::filesystem::path& dir, const std::string& name) {
    std::string text = slurp_file(dir / name);
    // Template files carry one editorial trailing newline; prompts do not.
    if (!text.empty() && text.back() == '\n') text.pop_back();
    return text;
}

constexpr const char* kLeadWithPreamble = "Based on the above historical utterances, please ";
constexpr const char* kLeadBare = "Please ";
constexpr const char* kLengthConstraint = " in no more than ten words of output";

}  // namespace

TemplateRegistry TemplateRegistry::load(const std::filesystem::path& directory) {
    json manifest;
    try {
        manifest = json::parse(slurp_file(directory / "manifest.json"));
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError("bad template manifest in " + directory.string() + ": " + e.what());
    }

    TemplateRegistry reg;
    const auto& extraction = manifest.at("extraction");
    reg.extraction_template_ = load_template_file(directory, extraction.at("file").get<std::string>());
    reg.recognition_template_ =
        load_template_file(directory, manifest.at("recognition").at("file").get<std::string>());
    reg.speaker_id_template_ =
        load_template_file(directory, manifest.at("speaker_id").at("file").get<std::string>());

    std::map<KeyElement, std::string> base_phrases;
    for (KeyElement e : kAllKeyElements) {
        const std::string name = to_string(e);
        reg.connectors_[e] = extraction.at("connectors").at(name).get<std::string>();
        base_phrases[e] = extraction.at("base_phrases").at(name).get<std::string>();
    }

    for (const auto& jv : extraction.at("variants")) {
        TemplateVariant v;
        v.variant_id = jv.at("variant_id").get<int>();
        v.includes_history_preamble = jv.at("includes_history_preamble").get<bool>();
        v.includes_length_constraint = jv.at("includes_length_constraint").get<bool>();
        v.phrase_map = base_phrases;
        if (jv.contains("phrases"))
            for (const auto& [name, phrase] : jv.at("phrases").items())
                v.phrase_map[parse_key_element(name)] = phrase.get<std::string>();
        reg.variants_[v.variant_id] = std::move(v);
    }
    if (reg.variants_.empty()) throw DataError("template manifest declares no variants");
    return reg;
}

const TemplateVariant& TemplateRegistry::variant(int variant_id) const {
    auto it = variants_.find(variant_id);
    if (it == variants_.end())
        throw DataError("unknown template variant: " + std::to_string(variant_id));
    return it->second;
}

std::vector<int> TemplateRegistry::variant_ids() const {
    std::vector<int> ids;
    for (const auto& [id, _] : variants_) ids.push_back(id);
    return ids;
}

RenderedPrompt TemplateRegistry::render_extraction_prompt(const DialogueWindow& window,
                                                          KeyElement element,
                                                          const TemplateVariant& variant) const {
    auto conn = connectors_.find(element);
    if (conn == connectors_.end())
        throw DataError(std::string("no connector for element ") + to_string(element));

    std::map<std::string, std::string> values;
    values["history"] = render_history(window, /*include_target=*/true);
    values["target"] = render_utterance(window.target);
    values["phrase"] = variant.phrase(element) + " " + conn->second;
    values["lead"] = variant.includes_history_preamble ? kLeadWithPreamble : kLeadBare;
    values["constraint"] = variant.includes_length_constraint ? kLengthConstraint : "";

    RenderedPrompt prompt;
    prompt.text = substitute(extraction_template_, values);
    prompt.token_estimate = whitespace_token_count(prompt.text);
    prompt.provenance = {window.conversation_id, window.target.index, to_string(element),
                         variant.variant_id};
    return prompt;
}

RenderedPrompt TemplateRegistry::render_extraction_prompt(const DialogueWindow& window,
                                                          KeyElement element,
                                                          int variant_id) const {
    return render_extraction_prompt(window, element, variant(variant_id));
}

InstructionExample TemplateRegistry::render_injection_example(const DialogueWindow& window,
                                                              KeyElement element,
                                                              const std::string& characteristic,
                                                              int variant_id) const {
    if (trim(characteristic).empty())
        throw DataError("characteristic must be non-empty for " + window.conversation_id + "[" +
                        std::to_string(window.target.index) + "]");
    RenderedPrompt prompt = render_extraction_prompt(window, element, variant_id);
    InstructionExample ex;
    ex.input_text = std::move(prompt.text);
    ex.target_text = characteristic;
    ex.mask_boundary = ex.input_text.size();
    ex.stage = 1;
    ex.meta = {window.conversation_id, window.target.index, "", "characteristic_injection",
               to_string(element), variant_id};
    return ex;
}

InstructionExample TemplateRegistry::render_recognition_example(
    const DialogueWindow& window, const LabelSpace& label_space,
    const std::optional<std::vector<std::string>>& characteristics,
    const std::optional<std::string>& gold) const {
    if (gold && !label_space.contains(*gold))
        throw DataError("gold label '" + *gold + "' is outside the label space {" +
                        label_space.joined() + "}");

    std::string char_block;
    if (characteristics)
        for (const auto& c : *characteristics)
            char_block += "The listener's reaction: " + c + "\n";

    std::map<std::string, std::string> values;
    values["history"] = render_history(window, /*include_target=*/true);
    values["target"] = render_utterance(window.target);
    values["labels"] = label_space.joined();
    values["characteristics"] = char_block;

    InstructionExample ex;
    ex.input_text = substitute(recognition_template_, values);
    ex.target_text = gold ? *gold : "";
    ex.mask_boundary = ex.input_text.size();
    ex.stage = 2;
    ex.meta = {window.conversation_id, window.target.index, "", "emotion_recognition", "", 0};
    return ex;
}

InstructionExample TemplateRegistry::render_speaker_id_example(
    const DialogueWindow& window, const std::vector<std::string>& speakers,
    const std::optional<std::string>& gold) const {
    if (speakers.empty()) throw DataError("speaker list must be non-empty");
    if (gold && std::find(speakers.begin(), speakers.end(), *gold) == speakers.end())
        throw DataError("gold speaker '" + *gold + "' is not in the candidate list");

    std::map<std::string, std::string> values;
    values["history"] = render_history(window, /*include_target=*/false);
    values["target"] = "\"" + window.target.text + "\"";  // no speaker prefix
    values["labels"] = join(speakers, ", ");

    InstructionExample ex;
    ex.input_text = substitute(speaker_id_template_, values);
    ex.target_text = gold ? *gold : "";
    ex.mask_boundary = ex.input_text.size();
    ex.stage = 1;
    ex.meta = {window.conversation_id, window.target.index, "", "speaker_identification", "", 0};
    return ex;
}

namespace {

bool speaker_tag_at(const std::string& s, std::size_t i) {
    static const std::string kTag = "Speaker";
    if (s.compare(i, kTag.size(), kTag) != 0) return false;
    std::size_t j = i + kTag.size();
    if (j >= s.size() || !std::isdigit(static_cast<unsigned char>(s[j]))) return false;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    return j + 1 < s.size() && s[j] == ':' && s[j + 1] == '"';
}

// Splits rendered history content into utterance segments on the
// `" Speaker{k}:"` joins produced by render_history.
std::vector<std::string> split_block_segments(const std::string& content) {
    std::vector<std::string> segments;
    if (content.empty()) return segments;
    std::size_t start = 0;
    for (std::size_t i = 2; i < content.size(); ++i) {
        if (content[i - 1] == ' ' && content[i - 2] == '"' && speaker_tag_at(content, i)) {
            segments.push_back(content.substr(start, i - 1 - start));
            start = i;
        }
    }
    segments.push_back(content.substr(start));
    return segments;
}

}  // namespace

std::string truncate_to_budget(const std::string& text, int budget,
                               const TokenCounter& count_tokens) {
    if (budget < 1) throw DataError("token budget must be >= 1");
    if (count_tokens(text) <= budget) return text;

    const std::string open = "### ";
    const std::string close = " ###";
    std::size_t block_start = text.find(open);
    if (block_start == std::string::npos) throw DataError("irreducible prompt: no history block");
    block_start += open.size();
    std::size_t block_end = text.find(close, block_start);
    if (block_end == std::string::npos) throw DataError("irreducible prompt: no history block");

    const std::string prefix = text.substr(0, block_start);
    const std::string suffix = text.substr(block_end);
    std::vector<std::string> segments = split_block_segments(text.substr(block_start, block_end - block_start));

    // The target slot comes right after the block; its copy at the block's
    // tail is protected from truncation.
    bool protect_last = false;
    std::size_t lt = text.find('<', block_end);
    if (lt != std::string::npos) {
        std::size_t gt = text.find('>', lt);
        if (gt != std::string::npos && !segments.empty() &&
            segments.back() == text.substr(lt + 1, gt - lt - 1))
            protect_last = true;
    }

    std::size_t first = 0;
    const std::size_t last_droppable = segments.size() - (protect_last ? 1 : 0);
    std::string current = text;
    while (count_tokens(current) > budget) {
        if (first >= last_droppable)
            throw DataError("irreducible prompt: exceeds budget of " + std::to_string(budget) +
                            " tokens with no droppable history");
        ++first;
        std::string joined;
        for (std::size_t i = first; i < segments.size(); ++i) {
            if (i > first) joined += ' ';
            joined += segments[i];
        }
        current = prefix + joined + suffix;
    }
    return current;
}

std::string examples_to_jsonl(const std::vector<InstructionExample>& examples) {
    using nlohmann::ordered_json;
    std::string out;
    for (const auto& ex : examples) {
        ordered_json j;
        j["input"] = ex.input_text;
        j["target"] = ex.target_text;
        j["stage"] = ex.stage;
        ordered_json meta;
        meta["conversation_id"] = ex.meta.conversation_id;
        meta["target_index"] = ex.meta.target_index;
        meta["dataset"] = ex.meta.dataset_id;
        meta["task"] = ex.meta.task;
        if (!ex.meta.key_element.empty()) meta["key_element"] = ex.meta.key_element;
        if (ex.meta.variant_id) meta["variant_id"] = ex.meta.variant_id;
        j["meta"] = std::move(meta);
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<InstructionExample> examples_from_jsonl(const std::string& text) {
    using nlohmann::ordered_json;
    std::vector<InstructionExample> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw DataError("instruction dataset line " + std::to_string(line_no) +
                            ": malformed JSON: " + e.what());
        }
        InstructionExample ex;
        ex.input_text = j.at("input").get<std::string>();
        ex.target_text = j.at("target").get<std::string>();
        ex.stage = j.at("stage").get<int>();
        ex.mask_boundary = ex.input_text.size();
        if (j.contains("meta")) {
            const auto& meta = j["meta"];
            if (meta.contains("conversation_id"))
                ex.meta.conversation_id = meta["conversation_id"].get<std::string>();
            if (meta.contains("target_index"))
                ex.meta.target_index = meta["target_index"].get<int>();
            if (meta.contains("dataset")) ex.meta.dataset_id = meta["dataset"].get<std::string>();
            if (meta.contains("task")) ex.meta.task = meta["task"].get<std::string>();
            if (meta.contains("key_element"))
                ex.meta.key_element = meta["key_element"].get<std::string>();
            if (meta.contains("variant_id")) ex.meta.variant_id = meta["variant_id"].get<int>();
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace ercforge

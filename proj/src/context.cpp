#include "ercforge/context.hpp"

#include "ercforge/errors.hpp"

namespace ercforge {

DialogueWindow build_window(const Conversation& conversation, int target_index,
                            int window_size) {
    const int total = conversation.size();
    if (target_index < 0 || target_index >= total)
        throw DataError("target index " + std::to_string(target_index) + " out of range for " +
                        conversation.conversation_id + " (" + std::to_string(total) +
                        " utterances)");
    if (window_size < 0) throw DataError("window size must be >= 0");

    DialogueWindow window;
    window.conversation_id = conversation.conversation_id;
    window.window_size = window_size;
    window.target = conversation.utterances[static_cast<std::size_t>(target_index)];
    const int begin = std::max(0, target_index - window_size);
    for (int i = begin; i < target_index; ++i)
        window.history.push_back(conversation.utterances[static_cast<std::size_t>(i)]);
    return window;
}

std::string render_utterance(const Utterance& utterance) {
    std::string out;
    out.reserve(utterance.speaker.size() + utterance.text.size() + 3);
    out += utterance.speaker;
    out += ":\"";
    out += utterance.text;
    out += '"';
    return out;
}

std::string render_history(const DialogueWindow& window, bool include_target) {
    std::string out;
    for (std::size_t i = 0; i < window.history.size(); ++i) {
        if (i) out += ' ';
        out += render_utterance(window.history[i]);
    }
    if (include_target) {
        if (!out.empty()) out += ' ';
        out += render_utterance(window.target);
    }
    return out;
}

}  // namespace ercforge

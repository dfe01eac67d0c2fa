// Historical-context windows around a target utterance and their canonical
// textual form: Speaker{k}:"{text}" segments joined by single spaces.
#pragma once

#include <string>
#include <vector>

#include "ercforge/corpus.hpp"

namespace ercforge {

struct DialogueWindow {
    std::string conversation_id;
    Utterance target;
    std::vector<Utterance> history;  // oldest first, indices max(0, j-W)..j-1
    int window_size = 0;
};

// history = utterances[max(0, j-W) .. j-1], target = utterances[j].
DialogueWindow build_window(const Conversation& conversation, int target_index,
                            int window_size);

// Speaker{k}:"{text}" with straight quotes, no space around the colon.
// Embedded quotes in the text are preserved verbatim.
std::string render_utterance(const Utterance& utterance);

std::string render_history(const DialogueWindow& window, bool include_target);

}  // namespace ercforge

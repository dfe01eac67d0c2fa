// Shared test helpers: fixture conversations, synthetic corpora with
// keyword-correlated labels, scripted backends, and independent metric
// oracles. Everything here is test-only and must stay independent of the
// implementation paths it checks.
#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ercforge/backend.hpp"
#include "ercforge/characteristics.hpp"
#include "ercforge/context.hpp"
#include "ercforge/corpus.hpp"
#include "ercforge/evaluation.hpp"
#include "ercforge/hash.hpp"
#include "ercforge/rng.hpp"
#include "ercforge/strings.hpp"

namespace ercforge::testing {

inline std::filesystem::path data_dir() { return ERCFORGE_DATA_DIR; }
inline std::filesystem::path test_dir() { return ERCFORGE_TEST_DIR; }
inline std::filesystem::path templates_dir() { return data_dir() / "templates"; }

inline TemplateRegistry load_registry() { return TemplateRegistry::load(templates_dir()); }

// The two conversations used by the checked-in prompt fixtures.
inline Conversation big_news_conversation() {
    Conversation c;
    c.conversation_id = "appendix/bignews";
    c.utterances = {{0, "Speaker1", "Okay, so big news.", "neutral"},
                    {1, "Speaker0", "What?", "neutral"}};
    return c;
}

inline Conversation esmeralda_conversation() {
    Conversation c;
    c.conversation_id = "appendix/esmeralda";
    c.utterances = {{0, "Speaker0", "Hey.", "neutral"},
                    {1, "Speaker1", "Hey.", "neutral"},
                    {2, "Speaker0", "Esmeralda, guess what?", "neutral"},
                    {3, "Speaker1", "What?", "neutral"}};
    return c;
}

// Small deterministic corpus builder; labels cycle over the space.
inline Corpus tiny_corpus(const std::string& dataset_id, const std::string& split,
                          const std::vector<std::string>& labels, int n_conversations,
                          int conversation_len) {
    Corpus corpus;
    corpus.dataset_id = dataset_id;
    corpus.split = split;
    corpus.label_space = LabelSpace::make(labels);
    int counter = 0;
    for (int c = 0; c < n_conversations; ++c) {
        Conversation conv;
        conv.conversation_id = dataset_id + "/conv" + std::to_string(c);
        for (int i = 0; i < conversation_len; ++i) {
            Utterance u;
            u.index = i;
            u.speaker = "Speaker" + std::to_string(i % 2);
            u.text = "utterance number " + std::to_string(counter);
            u.label = labels[static_cast<std::size_t>(counter) % labels.size()];
            conv.utterances.push_back(std::move(u));
            ++counter;
        }
        corpus.conversations.push_back(std::move(conv));
    }
    return corpus;
}

struct SyntheticParams {
    int n_conversations = 100;
    int conversation_len = 6;
    double keyword_prob = 0.8;     // gold keyword appears in the target text
    double distractor_prob = 0.1;  // a random other keyword also appears
    std::uint64_t seed = 7;
};

inline const std::vector<std::string>& synthetic_labels() {
    static const std::vector<std::string> labels = {"joyful", "gloomy", "irate", "serene"};
    return labels;
}

// Synthetic conversations whose utterance texts carry a label-correlated
// keyword (the label word itself) with probability keyword_prob, plus filler.
inline Corpus make_synthetic_corpus(const std::string& split, const SyntheticParams& params) {
    static const std::vector<std::string> filler = {
        "well",  "okay", "right", "listen", "maybe", "today", "honestly",
        "truly", "so",   "then",  "again",  "fine",  "sure",  "hmm"};
    const auto& labels = synthetic_labels();
    Rng rng(params.seed);
    Corpus corpus;
    corpus.dataset_id = "synthetic";
    corpus.split = split;
    corpus.label_space = LabelSpace::make(labels);
    for (int c = 0; c < params.n_conversations; ++c) {
        Conversation conv;
        conv.conversation_id = "synthetic/" + split + "-conv" + std::to_string(c);
        for (int i = 0; i < params.conversation_len; ++i) {
            Utterance u;
            u.index = i;
            u.speaker = "Speaker" + std::to_string(i % 2);
            u.label = labels[rng.below(labels.size())];
            std::vector<std::string> words;
            words.push_back(filler[rng.below(filler.size())]);
            if (rng.uniform01() < params.keyword_prob) words.push_back(u.label);
            if (rng.uniform01() < params.distractor_prob)
                words.push_back(labels[rng.below(labels.size())]);
            words.push_back(filler[rng.below(filler.size())]);
            u.text = join(words, " ");
            conv.utterances.push_back(std::move(u));
        }
        corpus.conversations.push_back(std::move(conv));
    }
    return corpus;
}

// A characteristic store whose texts start with the gold label keyword, i.e.
// characteristics that carry label-correlated clues.
inline CharacteristicStore make_synthetic_store(const Corpus& corpus, KeyElement element,
                                                int variant_id, const std::string& backend_id) {
    CharacteristicStore store;
    for (const auto& conv : corpus.conversations) {
        for (const auto& u : conv.utterances) {
            CharacteristicRecord r;
            r.conversation_id = conv.conversation_id;
            r.target_index = u.index;
            r.key_element = to_string(element);
            r.variant_id = variant_id;
            r.backend_id = backend_id;
            r.text = u.label + " reaction expected here";
            r.word_count = whitespace_token_count(r.text);
            r.prompt_hash = digest(r.conversation_id + ":" + std::to_string(u.index));
            store.upsert(std::move(r));
        }
    }
    return store;
}

// Deterministic scripted backend: replies are looked up by exact prompt, with
// an optional fallback. Used to inject known generations and failures.
class ScriptedBackend : public Backend {
public:
    std::map<std::string, std::string> replies;
    std::string fallback = "scripted reply";
    bool fail_all = false;
    std::set<int> fail_on_call;  // 1-based call numbers that throw
    mutable std::atomic<int> calls{0};

    std::string id() const override { return "mock"; }  // store keys match MockBackend
    ModelHandle base_handle() const override {
        ModelHandle h;
        h.backend_id = id();
        h.model_id = "scripted";
        return h;
    }
    GenerationResult generate(const ModelHandle&, const GenerationRequest& request) override {
        const int n = ++calls;
        if (fail_all || fail_on_call.count(n))
            throw BackendError(BackendError::Kind::Unreachable, "scripted failure");
        GenerationResult result;
        auto it = replies.find(request.prompt);
        result.text = it != replies.end() ? it->second : fallback;
        result.token_count = whitespace_token_count(result.text);
        return result;
    }
    ModelHandle finetune(const ModelHandle& handle, const std::vector<InstructionExample>&,
                         const AdapterParams&) override {
        return handle;
    }
    int count_tokens(const std::string& text) const override {
        return whitespace_token_count(text);
    }
};

// Independent confusion-matrix oracle for weighted F1. Builds the full K x
// (K+1) matrix first and derives every per-class statistic from it, unlike
// the implementation's per-item tallies.
inline double oracle_weighted_f1(const std::vector<std::string>& golds,
                                 const std::vector<std::string>& preds,
                                 const std::vector<std::string>& labels) {
    const std::size_t k = labels.size();
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < k; ++i) index[labels[i]] = i;
    std::vector<std::vector<std::size_t>> m(k, std::vector<std::size_t>(k + 1, 0));
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const std::size_t g = index.at(golds[i]);
        auto it = index.find(preds[i]);
        m[g][it == index.end() ? k : it->second] += 1;
    }
    double weighted = 0.0;
    std::size_t total = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t support = 0, tp = m[c][c], predicted = 0;
        for (std::size_t p = 0; p <= k; ++p) support += m[c][p];
        for (std::size_t g = 0; g < k; ++g) predicted += m[g][c];
        const double precision = predicted ? static_cast<double>(tp) / predicted : 0.0;
        const double recall = support ? static_cast<double>(tp) / support : 0.0;
        const double f1 =
            precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        weighted += f1 * static_cast<double>(support);
        total += support;
    }
    return total ? weighted / static_cast<double>(total) : 0.0;
}

inline PredictionSet prediction_set_from(const std::vector<std::string>& golds,
                                         const std::vector<std::string>& preds,
                                         const std::vector<std::string>& labels) {
    PredictionSet set;
    set.corpus_id = "test";
    set.label_space = LabelSpace::make(labels);
    for (std::size_t i = 0; i < golds.size(); ++i) {
        PredictionItem item;
        item.conversation_id = "c";
        item.target_index = static_cast<int>(i);
        item.gold = golds[i];
        item.parsed = preds[i];
        set.items.push_back(std::move(item));
    }
    return set;
}

}  // namespace ercforge::testing

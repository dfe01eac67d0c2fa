#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ercforge/backend.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/hash.hpp"
#include "ercforge/io.hpp"
#include "ercforge/rng.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

using nlohmann::ordered_json;

// Model state: softmax regression over counts of class tokens in the input.
// The class set doubles as the feature vocabulary, so only tokens that are
// learning targets ever influence the loss; everything else in the prompt is
// inert. Stages that share target tokens therefore share parameters, which is
// what lets an injection stage transfer into the recognition stage.
struct ToyBackend::State {
    std::vector<std::string> classes;
    std::map<std::string, std::size_t> class_index;
    std::vector<double> bias;                   // [class]
    std::vector<std::vector<double>> weights;   // [class][feature], feature == class token

    void rebuild_index() {
        class_index.clear();
        for (std::size_t i = 0; i < classes.size(); ++i) class_index[classes[i]] = i;
    }
};

namespace {

std::string normalize_token(std::string_view raw) {
    std::size_t b = 0;
    std::size_t e = raw.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(raw[e - 1]))) --e;
    return lower(raw.substr(b, e - b));
}

std::vector<std::string> normalized_tokens(const std::string& text) {
    std::vector<std::string> out;
    for (const auto& t : split_whitespace(text)) {
        std::string n = normalize_token(t);
        if (!n.empty()) out.push_back(std::move(n));
    }
    return out;
}

std::vector<double> features_for(const ToyBackend::State& state, const std::string& text) {
    std::vector<double> x(state.classes.size(), 0.0);
    for (const auto& t : normalized_tokens(text)) {
        auto it = state.class_index.find(t);
        if (it != state.class_index.end()) x[it->second] += 1.0;
    }
    return x;
}

std::string first_target_token(const InstructionExample& ex) {
    auto toks = normalized_tokens(ex.target_text);
    if (toks.empty())
        throw DataError("instruction example has an empty target at " + ex.meta.conversation_id +
                        "[" + std::to_string(ex.meta.target_index) + "]");
    return toks.front();
}

std::vector<double> logits_for(const ToyBackend::State& state, const std::vector<double>& x) {
    std::vector<double> l(state.classes.size(), 0.0);
    for (std::size_t c = 0; c < state.classes.size(); ++c) {
        double v = state.bias[c];
        const auto& w = state.weights[c];
        for (std::size_t f = 0; f < x.size(); ++f) v += w[f] * x[f];
        l[c] = v;
    }
    return l;
}

// Returns log P(class = g) under a numerically stable softmax.
double log_prob(const std::vector<double>& logits, std::size_t g) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - m);
    return logits[g] - m - std::log(z);
}

std::string dataset_bytes(const std::vector<InstructionExample>& dataset) {
    std::string bytes;
    for (const auto& ex : dataset) {
        bytes += ex.input_text;
        bytes += '\x1f';
        bytes += ex.target_text;
        bytes += '\x1e';
    }
    return bytes;
}

struct InFlightGuard {
    InFlightGuard(std::mutex& m, std::set<std::string>& set, const std::string& key)
        : mutex(m), in_flight(set), id(key) {
        std::lock_guard<std::mutex> lock(mutex);
        if (!in_flight.insert(id).second)
            throw BackendError(BackendError::Kind::Rejected,
                               "fine-tune already running for model " + id);
    }
    ~InFlightGuard() {
        std::lock_guard<std::mutex> lock(mutex);
        in_flight.erase(id);
    }
    std::mutex& mutex;
    std::set<std::string>& in_flight;
    std::string id;
};

}  // namespace

ToyBackend::ToyBackend(std::optional<std::filesystem::path> state_dir)
    : state_dir_(std::move(state_dir)) {
    auto base = std::make_shared<State>();
    std::lock_guard<std::mutex> lock(models_mutex_);
    models_["toy-base"] = std::move(base);
}

ModelHandle ToyBackend::base_handle() const {
    ModelHandle h;
    h.backend_id = id();
    h.model_id = "toy-base";
    return h;
}

std::shared_ptr<const ToyBackend::State> ToyBackend::state_for(const std::string& model_id) const {
    {
        std::lock_guard<std::mutex> lock(models_mutex_);
        auto it = models_.find(model_id);
        if (it != models_.end()) return it->second;
    }
    if (state_dir_) {
        std::filesystem::path file = *state_dir_ / (model_id + ".json");
        if (std::filesystem::exists(file)) {
            ordered_json j = ordered_json::parse(slurp_file(file));
            auto state = std::make_shared<State>();
            state->classes = j.at("classes").get<std::vector<std::string>>();
            state->bias = j.at("bias").get<std::vector<double>>();
            state->weights = j.at("weights").get<std::vector<std::vector<double>>>();
            state->rebuild_index();
            std::lock_guard<std::mutex> lock(models_mutex_);
            models_[model_id] = state;
            return state;
        }
    }
    throw BackendError(BackendError::Kind::ModelNotFound, "toy model not found: " + model_id);
}

GenerationResult ToyBackend::generate(const ModelHandle& handle,
                                      const GenerationRequest& request) {
    if (request.max_new_tokens < 1) throw DataError("max_new_tokens must be >= 1");
    if (request.temperature < 0) throw DataError("temperature must be >= 0");
    generate_calls_.fetch_add(1);

    auto state = state_for(handle.model_id);
    GenerationResult result;
    if (state->classes.empty()) return result;  // untrained base: empty completion

    auto x = features_for(*state, request.prompt);
    auto logits = logits_for(*state, x);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
        if (logits[c] > logits[best]) best = c;
    result.text = state->classes[best];
    result.token_count = 1;
    result.finish_reason = FinishReason::Stop;
    return result;
}

ModelHandle ToyBackend::finetune(const ModelHandle& handle,
                                 const std::vector<InstructionExample>& dataset,
                                 const AdapterParams& params) {
    if (dataset.empty()) throw DataError("fine-tune dataset is empty");
    const int stage = dataset.front().stage;
    for (const auto& ex : dataset)
        if (ex.stage != stage)
            throw DataError("fine-tune dataset mixes stages " + std::to_string(stage) + " and " +
                            std::to_string(ex.stage));

    InFlightGuard guard(finetune_mutex_, finetunes_in_flight_, handle.model_id);

    auto base = state_for(handle.model_id);
    auto state = std::make_shared<State>(*base);

    // Grow the closed vocabulary with unseen target tokens; existing rows get
    // zero weights for the new feature columns.
    std::vector<std::string> golds(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        golds[i] = first_target_token(dataset[i]);
        if (!state->class_index.count(golds[i])) {
            state->class_index[golds[i]] = state->classes.size();
            state->classes.push_back(golds[i]);
        }
    }
    const std::size_t n_classes = state->classes.size();
    state->bias.resize(n_classes, 0.0);
    state->weights.resize(n_classes);
    for (auto& row : state->weights) row.resize(n_classes, 0.0);

    const double lr = adapter_param_or(params, "learning_rate", 2e-4);
    const int epochs = static_cast<int>(adapter_param_or(params, "epochs", 3));
    const int default_batch = stage == 1 ? 8 : 16;
    const int batch_size =
        std::max(1, static_cast<int>(adapter_param_or(params, "batch_size", default_batch)));
    const std::uint64_t shuffle_seed =
        static_cast<std::uint64_t>(adapter_param_or(params, "shuffle_seed", 1));
    if (lr <= 0) throw DataError("learning_rate must be > 0");
    if (epochs < 1) throw DataError("epochs must be >= 1");

    std::vector<std::vector<double>> xs(dataset.size());
    std::vector<std::size_t> ys(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        xs[i] = features_for(*state, dataset[i].input_text);
        ys[i] = state->class_index.at(golds[i]);
    }

    Rng rng(shuffle_seed);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> epoch_losses;
    std::vector<double> grad_bias(n_classes);
    std::vector<std::vector<double>> grad_w(n_classes, std::vector<double>(n_classes));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            for (auto& g : grad_bias) g = 0.0;
            for (auto& row : grad_w)
                for (auto& g : row) g = 0.0;
            for (std::size_t k = begin; k < end; ++k) {
                const std::size_t i = order[k];
                auto logits = logits_for(*state, xs[i]);
                double m = logits[0];
                for (double v : logits) m = std::max(m, v);
                double z = 0.0;
                for (double v : logits) z += std::exp(v - m);
                for (std::size_t c = 0; c < n_classes; ++c) {
                    const double p = std::exp(logits[c] - m) / z;
                    const double err = p - (c == ys[i] ? 1.0 : 0.0);
                    grad_bias[c] += err;
                    for (std::size_t f = 0; f < n_classes; ++f)
                        grad_w[c][f] += err * xs[i][f];
                }
            }
            const double scale = lr / static_cast<double>(end - begin);
            for (std::size_t c = 0; c < n_classes; ++c) {
                state->bias[c] -= scale * grad_bias[c];
                for (std::size_t f = 0; f < n_classes; ++f)
                    state->weights[c][f] -= scale * grad_w[c][f];
            }
        }
        double loss = 0.0;
        for (std::size_t i = 0; i < dataset.size(); ++i)
            loss -= log_prob(logits_for(*state, xs[i]), ys[i]);
        epoch_losses.push_back(loss / static_cast<double>(dataset.size()));
    }

    StageDescriptor desc;
    desc.stage = stage;
    desc.task = dataset.front().meta.task;
    desc.dataset_digest = digest(dataset_bytes(dataset));
    desc.example_count = dataset.size();
    desc.seed = shuffle_seed;
    desc.epochs = epochs;
    desc.epoch_losses = std::move(epoch_losses);

    ModelHandle next = handle;
    next.model_id = handle.model_id + "+s" + std::to_string(stage) + "-" +
                    digest(desc.dataset_digest + ":" + std::to_string(shuffle_seed) + ":" +
                           std::to_string(lr) + ":" + std::to_string(epochs) + ":" +
                           std::to_string(batch_size))
                        .substr(0, 8);
    next.stage_lineage.push_back(std::move(desc));
    for (const auto& [k, v] : params) next.adapter_params[k] = v;

    {
        std::lock_guard<std::mutex> lock(models_mutex_);
        models_[next.model_id] = state;
    }
    if (state_dir_) {
        ordered_json j;
        j["classes"] = state->classes;
        j["bias"] = state->bias;
        j["weights"] = state->weights;
        write_file(*state_dir_ / (next.model_id + ".json"), j.dump() + "\n");
    }
    return next;
}

double ToyBackend::evaluate_loss(const ModelHandle& handle,
                                 const std::vector<InstructionExample>& dataset) const {
    if (dataset.empty()) throw DataError("cannot evaluate loss of an empty dataset");
    auto state = state_for(handle.model_id);
    double loss = 0.0;
    for (const auto& ex : dataset) {
        const std::string gold = first_target_token(ex);
        auto it = state->class_index.find(gold);
        if (it == state->class_index.end())
            throw DataError("target token '" + gold + "' is not in the model vocabulary");
        loss -= log_prob(logits_for(*state, features_for(*state, ex.input_text)), it->second);
    }
    return loss / static_cast<double>(dataset.size());
}

int ToyBackend::count_tokens(const std::string& text) const {
    return whitespace_token_count(text);
}

}  // namespace ercforge

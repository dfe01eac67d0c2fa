#include "ercforge/backend.hpp"

#include <json.hpp>

#include "ercforge/errors.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

using nlohmann::ordered_json;

const char* to_string(FinishReason reason) {
    switch (reason) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        case FinishReason::Error: return "error";
    }
    return "?";
}

bool ModelHandle::has_stage(int stage) const {
    for (const auto& s : stage_lineage)
        if (s.stage == stage) return true;
    return false;
}

std::string handle_to_json(const ModelHandle& handle) {
    ordered_json j;
    j["backend_id"] = handle.backend_id;
    j["model_id"] = handle.model_id;
    ordered_json lineage = ordered_json::array();
    for (const auto& s : handle.stage_lineage) {
        ordered_json js;
        js["stage"] = s.stage;
        js["task"] = s.task;
        js["dataset_digest"] = s.dataset_digest;
        js["example_count"] = s.example_count;
        js["seed"] = s.seed;
        js["epochs"] = s.epochs;
        js["epoch_losses"] = s.epoch_losses;
        lineage.push_back(std::move(js));
    }
    j["stage_lineage"] = std::move(lineage);
    j["adapter_params"] = handle.adapter_params;
    return j.dump(2) + "\n";
}

ModelHandle handle_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("bad model handle JSON: ") + e.what());
    }
    ModelHandle h;
    h.backend_id = j.at("backend_id").get<std::string>();
    h.model_id = j.at("model_id").get<std::string>();
    for (const auto& js : j.at("stage_lineage")) {
        StageDescriptor s;
        s.stage = js.at("stage").get<int>();
        s.task = js.at("task").get<std::string>();
        s.dataset_digest = js.at("dataset_digest").get<std::string>();
        s.example_count = js.at("example_count").get<std::size_t>();
        s.seed = js.at("seed").get<std::uint64_t>();
        s.epochs = js.at("epochs").get<int>();
        if (js.contains("epoch_losses"))
            s.epoch_losses = js.at("epoch_losses").get<std::vector<double>>();
        h.stage_lineage.push_back(std::move(s));
    }
    if (j.contains("adapter_params"))
        h.adapter_params = j.at("adapter_params").get<AdapterParams>();
    return h;
}

double adapter_param_or(const AdapterParams& params, const std::string& key, double fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw DataError("adapter param '" + key + "' is not numeric: " + it->second);
    }
}

std::unique_ptr<Backend> make_backend(const std::string& descriptor) {
    auto colon = descriptor.find(':');
    const std::string kind = descriptor.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : descriptor.substr(colon + 1);
    if (kind == "mock")
        return std::make_unique<MockBackend>(arg.empty() ? 0 : std::stoull(arg));
    if (kind == "toy")
        return std::make_unique<ToyBackend>(
            arg.empty() ? std::nullopt : std::optional<std::filesystem::path>(arg));
    if (kind == "http") {
        if (arg.empty()) {
            const char* env = std::getenv("ERCFORGE_BASE_URL");
            if (!env) throw UsageError("http backend needs a base URL (or ERCFORGE_BASE_URL)");
            return std::make_unique<HttpBackend>(env);
        }
        return std::make_unique<HttpBackend>(arg);
    }
    if (kind == "fixture") {
        if (arg.empty()) throw UsageError("fixture backend needs a store path");
        return std::make_unique<RecordedFixtureBackend>(arg);
    }
    throw UsageError("unknown backend descriptor: " + descriptor);
}

}  // namespace ercforge

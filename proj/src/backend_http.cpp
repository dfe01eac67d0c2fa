#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ercforge/backend.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

using nlohmann::json;

namespace {

FinishReason parse_finish_reason(const std::string& s) {
    if (s == "stop") return FinishReason::Stop;
    if (s == "length") return FinishReason::Length;
    if (s == "error") return FinishReason::Error;
    throw BackendError(BackendError::Kind::Protocol, "unknown finish_reason: " + s);
}

[[noreturn]] void throw_for_status(int status, const std::string& body) {
    if (status == 404)
        throw BackendError(BackendError::Kind::ModelNotFound, "model not found: " + body);
    if (status == 429 || status == 402)
        throw BackendError(BackendError::Kind::BudgetExceeded, "budget exceeded: " + body);
    throw BackendError(BackendError::Kind::Protocol,
                       "unexpected HTTP status " + std::to_string(status) + ": " + body);
}

}  // namespace

HttpBackend::HttpBackend(std::string base_url, HttpBackendOptions options)
    : base_url_(std::move(base_url)), options_(std::move(options)) {
    if (!options_.api_key) {
        if (const char* env = std::getenv("ERCFORGE_API_KEY")) options_.api_key = env;
    }
}

ModelHandle HttpBackend::base_handle() const {
    ModelHandle h;
    h.backend_id = id();
    h.model_id = "remote-base";
    return h;
}

int HttpBackend::count_tokens(const std::string& text) const {
    return whitespace_token_count(text);
}

namespace {

struct HttpResponse {
    int status = 0;
    std::string body;
};

// Runs a request with retries on transport errors and 5xx responses only.
template <typename Fn>
HttpResponse with_retries(const HttpBackendOptions& options, Fn&& attempt) {
    int backoff_ms = options.backoff_initial_ms;
    std::string last_error = "no attempts made";
    for (int i = 0; i < options.max_attempts; ++i) {
        if (i > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
        httplib::Result res = attempt();
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        return HttpResponse{res->status, res->body};
    }
    throw BackendError(BackendError::Kind::Unreachable,
                       "backend unreachable after " + std::to_string(options.max_attempts) +
                           " attempts: " + last_error);
}

}  // namespace

GenerationResult HttpBackend::generate(const ModelHandle& handle,
                                       const GenerationRequest& request) {
    if (request.max_new_tokens < 1) throw DataError("max_new_tokens must be >= 1");

    json body;
    body["model"] = handle.model_id;
    body["prompt"] = request.prompt;
    body["max_new_tokens"] = request.max_new_tokens;
    body["temperature"] = request.temperature;
    body["stop"] = request.stop;
    if (request.seed) body["seed"] = *request.seed;
    const std::string payload = body.dump();

    httplib::Client client(base_url_);
    client.set_connection_timeout(options_.timeout_sec, 0);
    client.set_read_timeout(options_.timeout_sec, 0);
    httplib::Headers headers;
    if (options_.api_key) headers.emplace("Authorization", "Bearer " + *options_.api_key);

    const auto started = std::chrono::steady_clock::now();
    HttpResponse res = with_retries(options_, [&] {
        return client.Post("/generate", headers, payload, "application/json");
    });
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);

    if (res.status != 200) throw_for_status(res.status, res.body);
    json reply;
    try {
        reply = json::parse(res.body);
    } catch (const std::exception& e) {
        throw BackendError(BackendError::Kind::Protocol,
                           std::string("bad generate response: ") + e.what());
    }

    GenerationResult result;
    result.text = reply.at("text").get<std::string>();
    result.finish_reason = parse_finish_reason(reply.at("finish_reason").get<std::string>());
    result.token_count = reply.contains("token_count") ? reply["token_count"].get<int>()
                                                       : whitespace_token_count(result.text);
    result.latency_ms = static_cast<int>(elapsed.count());
    return result;
}

ModelHandle HttpBackend::finetune(const ModelHandle& handle,
                                  const std::vector<InstructionExample>& dataset,
                                  const AdapterParams& params) {
    if (dataset.empty()) throw DataError("fine-tune dataset is empty");
    const int stage = dataset.front().stage;
    for (const auto& ex : dataset)
        if (ex.stage != stage)
            throw DataError("fine-tune dataset mixes stages " + std::to_string(stage) + " and " +
                            std::to_string(ex.stage));

    {
        std::lock_guard<std::mutex> lock(finetune_mutex_);
        if (!finetunes_in_flight_.insert(handle.model_id).second)
            throw BackendError(BackendError::Kind::Rejected,
                               "fine-tune already running for model " + handle.model_id);
    }
    struct Release {
        HttpBackend* self;
        std::string id;
        ~Release() {
            std::lock_guard<std::mutex> lock(self->finetune_mutex_);
            self->finetunes_in_flight_.erase(id);
        }
    } release{this, handle.model_id};

    json body;
    body["base_model"] = handle.model_id;
    body["dataset_url_or_inline"] = examples_to_jsonl(dataset);
    body["hyperparams"] = params;

    httplib::Client client(base_url_);
    client.set_connection_timeout(options_.timeout_sec, 0);
    client.set_read_timeout(options_.timeout_sec, 0);
    httplib::Headers headers;
    if (options_.api_key) headers.emplace("Authorization", "Bearer " + *options_.api_key);

    HttpResponse res = with_retries(options_, [&] {
        return client.Post("/finetune", headers, body.dump(), "application/json");
    });
    if (res.status != 200) throw_for_status(res.status, res.body);

    std::string job_id;
    try {
        job_id = json::parse(res.body).at("job_id").get<std::string>();
    } catch (const std::exception& e) {
        throw BackendError(BackendError::Kind::Protocol,
                           std::string("bad finetune response: ") + e.what());
    }

    // Submit/poll: training jobs are long-running.
    std::string model_id;
    while (true) {
        HttpResponse poll = with_retries(options_, [&] {
            return client.Get(("/jobs/" + job_id).c_str(), headers);
        });
        if (poll.status != 200) throw_for_status(poll.status, poll.body);
        json status;
        try {
            status = json::parse(poll.body);
        } catch (const std::exception& e) {
            throw BackendError(BackendError::Kind::Protocol,
                               std::string("bad job status response: ") + e.what());
        }
        const std::string s = status.at("status").get<std::string>();
        if (s == "done") {
            model_id = status.at("model").get<std::string>();
            break;
        }
        if (s == "failed")
            throw BackendError(BackendError::Kind::JobFailed,
                               "fine-tune job failed: job_id=" + job_id);
        if (s != "running")
            throw BackendError(BackendError::Kind::Protocol, "unknown job status: " + s);
        std::this_thread::sleep_for(std::chrono::milliseconds(options_.poll_interval_ms));
    }

    StageDescriptor desc;
    desc.stage = stage;
    desc.task = dataset.front().meta.task;
    desc.dataset_digest = "remote";
    desc.example_count = dataset.size();
    desc.epochs = static_cast<int>(adapter_param_or(params, "epochs", 0));

    ModelHandle next = handle;
    next.model_id = model_id;
    next.stage_lineage.push_back(std::move(desc));
    for (const auto& [k, v] : params) next.adapter_params[k] = v;
    return next;
}

}  // namespace ercforge

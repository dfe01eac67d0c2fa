#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ercforge/backend.hpp"
#include "ercforge/errors.hpp"
#include "support.hpp"

using namespace ercforge;
using nlohmann::json;

namespace {

// In-process completion server for exercising the wire contract.
struct TestServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    TestServer() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~TestServer() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

HttpBackendOptions fast_options() {
    HttpBackendOptions options;
    options.max_attempts = 3;
    options.backoff_initial_ms = 1;
    options.poll_interval_ms = 1;
    options.timeout_sec = 5;
    return options;
}

}  // namespace

TEST_CASE("http generate round-trips the wire contract") {
    TestServer ts;
    json seen;
    std::string seen_auth;
    ts.server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        if (req.has_header("Authorization")) seen_auth = req.get_header_value("Authorization");
        res.set_content(R"({"text": "joyful", "finish_reason": "stop"})", "application/json");
    });

    HttpBackendOptions options = fast_options();
    options.api_key = "sekrit";
    HttpBackend backend(ts.url(), options);
    GenerationRequest request;
    request.prompt = "label this";
    request.max_new_tokens = 8;
    request.temperature = 0.0;
    request.stop = {"\n"};
    request.seed = 5;

    GenerationResult result = backend.generate(backend.base_handle(), request);
    CHECK(result.text == "joyful");
    CHECK(result.finish_reason == FinishReason::Stop);
    CHECK(result.token_count == 1);
    CHECK(seen.at("model") == "remote-base");
    CHECK(seen.at("prompt") == "label this");
    CHECK(seen.at("max_new_tokens") == 8);
    CHECK(seen.at("temperature") == 0.0);
    CHECK(seen.at("stop") == json::array({"\n"}));
    CHECK(seen.at("seed") == 5);
    CHECK(seen_auth == "Bearer sekrit");
}

TEST_CASE("http generate retries 5xx then succeeds") {
    TestServer ts;
    std::atomic<int> calls{0};
    ts.server.Post("/generate", [&](const httplib::Request&, httplib::Response& res) {
        if (++calls <= 2) {
            res.status = 500;
            res.set_content("boom", "text/plain");
        } else {
            res.set_content(R"({"text": "ok ok", "finish_reason": "length"})",
                            "application/json");
        }
    });

    HttpBackend backend(ts.url(), fast_options());
    GenerationRequest request;
    request.prompt = "x";
    GenerationResult result = backend.generate(backend.base_handle(), request);
    CHECK(calls == 3);
    CHECK(result.finish_reason == FinishReason::Length);
    CHECK(result.token_count == 2);
}

TEST_CASE("http backend errors are distinguishable") {
    SUBCASE("unreachable host") {
        HttpBackend backend("http://127.0.0.1:1", fast_options());
        GenerationRequest request;
        request.prompt = "x";
        try {
            static_cast<void>(backend.generate(backend.base_handle(), request));
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.kind == BackendError::Kind::Unreachable);
        }
    }
    SUBCASE("model not found and budget exceeded") {
        TestServer ts;
        std::atomic<int> status{404};
        ts.server.Post("/generate", [&](const httplib::Request&, httplib::Response& res) {
            res.status = status.load();
            res.set_content("nope", "text/plain");
        });
        HttpBackend backend(ts.url(), fast_options());
        GenerationRequest request;
        request.prompt = "x";
        try {
            static_cast<void>(backend.generate(backend.base_handle(), request));
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.kind == BackendError::Kind::ModelNotFound);
        }
        status = 429;
        try {
            static_cast<void>(backend.generate(backend.base_handle(), request));
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.kind == BackendError::Kind::BudgetExceeded);
        }
    }
}

TEST_CASE("http fine-tune submits and polls to completion") {
    TestServer ts;
    json submitted;
    std::atomic<int> polls{0};
    ts.server.Post("/finetune", [&](const httplib::Request& req, httplib::Response& res) {
        submitted = json::parse(req.body);
        res.set_content(R"({"job_id": "job-77"})", "application/json");
    });
    ts.server.Get("/jobs/job-77", [&](const httplib::Request&, httplib::Response& res) {
        if (++polls < 3)
            res.set_content(R"({"status": "running"})", "application/json");
        else
            res.set_content(R"({"status": "done", "model": "remote-tuned-1"})",
                            "application/json");
    });

    HttpBackend backend(ts.url(), fast_options());
    InstructionExample ex;
    ex.input_text = "classify <\"hi\"> :";
    ex.target_text = "joyful";
    ex.stage = 2;
    ex.meta.task = "emotion_recognition";

    ModelHandle tuned = backend.finetune(backend.base_handle(), {ex},
                                         {{"learning_rate", "0.0002"}, {"epochs", "2"}});
    CHECK(polls >= 3);
    CHECK(tuned.model_id == "remote-tuned-1");
    REQUIRE(tuned.stage_lineage.size() == 1);
    CHECK(tuned.stage_lineage[0].stage == 2);
    CHECK(submitted.at("base_model") == "remote-base");
    CHECK(submitted.at("hyperparams").at("epochs") == "2");
    CHECK(submitted.at("dataset_url_or_inline").get<std::string>().find("\"stage\":2") !=
          std::string::npos);
}

TEST_CASE("http fine-tune failures carry the job id") {
    TestServer ts;
    ts.server.Post("/finetune", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"job_id": "job-13"})", "application/json");
    });
    ts.server.Get("/jobs/job-13", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status": "failed"})", "application/json");
    });

    HttpBackend backend(ts.url(), fast_options());
    InstructionExample ex;
    ex.input_text = "x";
    ex.target_text = "y";
    ex.stage = 1;
    try {
        static_cast<void>(backend.finetune(backend.base_handle(), {ex}, {}));
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.kind == BackendError::Kind::JobFailed);
        CHECK(std::string(e.what()).find("job-13") != std::string::npos);
    }
}

// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "finesec/llmclient.hpp"

#include <catch_amalgamated.hpp>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <thread>

using namespace finesec;
using namespace finesec::llm;

namespace {

CompletionRequest request(std::string backend, std::string system, std::string user) {
    CompletionRequest r;
    r.backend_id = std::move(backend);
    r.system_prompt = std::move(system);
    r.user_prompt = std::move(user);
    return r;
}

class FailingBackend final : public Backend {
public:
    explicit FailingBackend(ErrorKind kind, int failures = 1 << 30) : kind_(kind), failures_(failures) {}
    CompletionResult complete(const CompletionRequest&) override {
        if (calls_++ < failures_) throw BackendError(kind_, "scripted failure");
        return {"recovered", {}, 0};
    }

private:
    ErrorKind kind_;
    int failures_;
    int calls_ = 0;
};

class SlowBackend final : public Backend {
public:
    CompletionResult complete(const CompletionRequest&) override {
        const int now = ++active;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --active;
        return {"ok", {}, 20};
    }
    std::atomic<int> active{0};
    std::atomic<int> peak{0};
};

}  // namespace

TEST_CASE("fixture key hashes the prompts joined by NUL") {
    CHECK(fixture_key("sys", "user") == sha256_hex(std::string("sys\0user", 8)));
    CHECK(fixture_key("a", "bc") != fixture_key("ab", "c"));
}

TEST_CASE("mock backend replays fixtures") {
    fstest::TempDir tmp;
    fstest::spit(tmp / "fx" / (fixture_key("s1", "u1") + ".txt"), "first answer");
    fstest::spit(tmp / "fx" / (fixture_key("s2", "u2") + ".txt"), "second answer\n");
    Client client;
    client.register_backend("m", BackendKind::mock, {{"fixtures", (tmp / "fx").string()}, {"latency_ms", "250"}});

    SECTION("both fixtures are retrievable verbatim") {
        const auto a = client.complete(request("m", "s1", "u1"));
        CHECK(a.text == "first answer");
        CHECK(a.latency_ms == 250);
        CHECK(client.complete(request("m", "s2", "u2")).text == "second answer\n");
    }
    SECTION("identical requests give identical text") {
        for (int i = 0; i < 5; ++i) CHECK(client.complete(request("m", "s1", "u1")).text == "first answer");
    }
    SECTION("a missing fixture names the key") {
        const auto key = fixture_key("s3", "u3");
        try {
            client.complete(request("m", "s3", "u3"));
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.kind() == ErrorKind::no_fixture);
            CHECK(std::string(e.what()).find(key) != std::string::npos);
        }
        CHECK(client.attempts("m") == 1);
    }
    SECTION("unknown backend id is a configuration error") {
        try {
            client.complete(request("nope", "s1", "u1"));
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.kind() == ErrorKind::config);
        }
    }
    SECTION("duplicate id") {
        CHECK_THROWS_AS(client.register_backend("m", BackendKind::mock, {{"fixtures", (tmp / "fx").string()}}),
                        ConfigError);
    }
}

TEST_CASE("backend registration errors") {
    fstest::TempDir tmp;
    Client client;
    CHECK_THROWS_AS(client.register_backend("h", BackendKind::http_openai_compatible, {{"model", "x"}}), ConfigError);
    CHECK_THROWS_AS(client.register_backend("m", BackendKind::mock, {}), ConfigError);
    CHECK_THROWS_AS(client.register_backend("m", BackendKind::mock, {{"fixtures", (tmp / "missing").string()}}),
                    BackendError);
    CHECK_THROWS_AS(client.register_backend("m", BackendKind::mock,
                                            {{"fixtures", tmp.path().string()}, {"max_retries", "lots"}}),
                    ConfigError);
    CHECK_FALSE(client.has_backend("m"));
}

TEST_CASE("request validation") {
    auto r = request("m", "s", "u");
    r.decoding.max_tokens = 0;
    CHECK_THROWS_AS(r.validate(), ConfigError);
    r.decoding.max_tokens = 1;
    r.decoding.temperature = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(r.validate(), ConfigError);
}

TEST_CASE("retry budget") {
    const RetryPolicy quick{2, std::chrono::milliseconds(1), std::chrono::milliseconds(2)};
    SECTION("transient failures stop after max_retries + 1 attempts") {
        Client client;
        client.add_backend("t", std::make_unique<FailingBackend>(ErrorKind::transient), quick);
        try {
            client.complete(request("t", "s", "u"));
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.kind() == ErrorKind::timeout);
        }
        CHECK(client.attempts("t") == 3);
    }
    SECTION("a transient failure within budget recovers") {
        Client client;
        client.add_backend("t", std::make_unique<FailingBackend>(ErrorKind::transient, 2), quick);
        CHECK(client.complete(request("t", "s", "u")).text == "recovered");
        CHECK(client.attempts("t") == 3);
    }
    SECTION("authentication failures are never retried") {
        Client client;
        client.add_backend("a", std::make_unique<FailingBackend>(ErrorKind::auth), quick);
        CHECK_THROWS_AS(client.complete(request("a", "s", "u")), BackendError);
        CHECK(client.attempts("a") == 1);
    }
}

TEST_CASE("in-flight limit bounds concurrency") {
    Client client;
    auto backend = std::make_unique<SlowBackend>();
    auto* raw = backend.get();
    client.add_backend("slow", std::move(backend), {}, 2);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&] { client.complete(request("slow", "s", "u")); });
    for (auto& t : threads) t.join();
    CHECK(raw->peak.load() <= 2);
    CHECK(client.attempts("slow") == 8);
}

TEST_CASE("api key variable name") {
    CHECK(api_key_env_var("teacher") == "FINESEC_API_KEY_TEACHER");
    CHECK(api_key_env_var("gpt-4o.mini") == "FINESEC_API_KEY_GPT_4O_MINI");
}

TEST_CASE("http backend speaks chat completions") {
    httplib::Server server;
    std::atomic<int> status{200};
    std::string body_out = R"({"choices":[{"message":{"role":"assistant","content":"CWE: CWE-190"}}],)"
                           R"("usage":{"prompt_tokens":12,"completion_tokens":4}})";
    nlohmann::json seen;
    std::string auth;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        seen = nlohmann::json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.status = status.load();
        res.set_content(body_out, "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const std::string endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
    Client client;
    {
        fstest::EnvVar key(api_key_env_var("remote"), "sk-test");
        client.register_backend("remote", BackendKind::http_openai_compatible,
                                {{"endpoint", endpoint}, {"model", "gpt-test"}, {"backoff_ms", "1"}, {"max_retries", "1"}});
    }
    auto req = request("remote", "system text", "user text");
    req.decoding.seed = 9;

    SECTION("success") {
        const auto r = client.complete(req);
        CHECK(r.text == "CWE: CWE-190");
        CHECK(r.usage.prompt_tokens == 12);
        CHECK(r.usage.completion_tokens == 4);
        CHECK(auth == "Bearer sk-test");
        CHECK(seen["model"] == "gpt-test");
        CHECK(seen["messages"][0]["content"] == "system text");
        CHECK(seen["messages"][1]["role"] == "user");
        CHECK(seen["seed"] == 9);
    }
    SECTION("server errors are retried") {
        status = 503;
        CHECK_THROWS_AS(client.complete(req), BackendError);
        CHECK(hits.load() == 2);
    }
    SECTION("401 is an auth failure without retry") {
        status = 401;
        try {
            client.complete(req);
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.kind() == ErrorKind::auth);
        }
        CHECK(hits.load() == 1);
    }
    SECTION("malformed body") {
        body_out = R"({"choices":[]})";
        try {
            client.complete(req);
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.kind() == ErrorKind::malformed_response);
        }
    }
    server.stop();
    listener.join();
}

TEST_CASE("http backend without credentials fails fast") {
    Client client;
    fstest::EnvVar clear(api_key_env_var("nokey"), "");
    client.register_backend("nokey", BackendKind::http_openai_compatible, {{"endpoint", "http://127.0.0.1:9/v1"}});
    try {
        client.complete(request("nokey", "s", "u"));
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.kind() == ErrorKind::auth);
        CHECK(std::string(e.what()).find("FINESEC_API_KEY_NOKEY") != std::string::npos);
    }
}

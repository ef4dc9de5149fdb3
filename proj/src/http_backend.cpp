// SPDX-License-Identifier: Apache-2.0
#include "finesec/llmclient.hpp"

#include <httplib.h>
#include <json.hpp>

namespace finesec::llm {

namespace {

struct ParsedEndpoint {
    std::string origin;  // scheme://host[:port]
    std::string base_path;
};

ParsedEndpoint split_endpoint(const std::string& endpoint) {
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must include a scheme: " + endpoint);
    auto path_start = endpoint.find('/', scheme_end + 3);
    ParsedEndpoint out;
    if (path_start == std::string::npos) {
        out.origin = endpoint;
    } else {
        out.origin = endpoint.substr(0, path_start);
        out.base_path = endpoint.substr(path_start);
    }
    while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
    return out;
}

}  // namespace

HttpBackend::HttpBackend(Options options) : options_(std::move(options)) { split_endpoint(options_.endpoint); }

CompletionResult HttpBackend::complete(const CompletionRequest& req) {
    if (options_.api_key.empty())
        throw BackendError(ErrorKind::auth, "no credentials: set " + api_key_env_var(req.backend_id));

    const auto ep = split_endpoint(options_.endpoint);
    httplib::Client cli(ep.origin);
    const auto secs = options_.timeout.count() / 1000;
    const auto usecs = (options_.timeout.count() % 1000) * 1000;
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);

    nlohmann::json body;
    body["model"] = options_.model;
    body["messages"] = nlohmann::json::array({
        {{"role", "system"}, {"content", req.system_prompt}},
        {{"role", "user"}, {"content", req.user_prompt}},
    });
    body["temperature"] = req.decoding.temperature;
    body["max_tokens"] = req.decoding.max_tokens;
    if (req.decoding.seed) body["seed"] = *req.decoding.seed;

    httplib::Headers headers = {{"Authorization", "Bearer " + options_.api_key}};
    const auto started = std::chrono::steady_clock::now();
    auto res = cli.Post(ep.base_path + "/chat/completions", headers, body.dump(), "application/json");
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);

    if (!res) throw BackendError(ErrorKind::transient, "request failed: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403)
        throw BackendError(ErrorKind::auth, "authentication failed (HTTP " + std::to_string(res->status) + ")");
    if (res->status == 408 || res->status == 429 || res->status >= 500)
        throw BackendError(ErrorKind::transient, "HTTP " + std::to_string(res->status));
    if (res->status < 200 || res->status >= 300)
        throw BackendError(ErrorKind::rejected, "HTTP " + std::to_string(res->status) + ": " + res->body);

    try {
        const auto j = nlohmann::json::parse(res->body);
        CompletionResult out;
        out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
            out.usage.prompt_tokens = u->value("prompt_tokens", 0);
            out.usage.completion_tokens = u->value("completion_tokens", 0);
        }
        out.latency_ms = latency.count();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(ErrorKind::malformed_response, std::string("malformed completion response: ") + e.what());
    }
}

}  // namespace finesec::llm

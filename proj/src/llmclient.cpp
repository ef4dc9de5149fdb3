// SPDX-License-Identifier: Apache-2.0
#include "finesec/llmclient.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace finesec::llm {

namespace fs = std::filesystem;

void CompletionRequest::validate() const {
    if (decoding.max_tokens <= 0) throw ConfigError("max_tokens must be positive");
    if (!std::isfinite(decoding.temperature) || decoding.temperature < 0)
        throw ConfigError("temperature must be finite and non-negative");
}

std::string to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::auth: return "auth";
    case ErrorKind::transient: return "transient";
    case ErrorKind::timeout: return "timeout";
    case ErrorKind::malformed_response: return "malformed-response";
    case ErrorKind::rejected: return "rejected";
    case ErrorKind::no_fixture: return "no-fixture";
    }
    return "unknown";
}

std::string fixture_key(std::string_view system_prompt, std::string_view user_prompt) {
    std::string material;
    material.reserve(system_prompt.size() + user_prompt.size() + 1);
    material.append(system_prompt).push_back('\0');
    material.append(user_prompt);
    return sha256_hex(material);
}

MockBackend::MockBackend(const fs::path& fixture_dir, std::int64_t latency_ms) : latency_ms_(latency_ms) {
    std::error_code ec;
    if (!fs::is_directory(fixture_dir, ec))
        throw BackendError(ErrorKind::config, "unreadable fixture directory: " + fixture_dir.string());
    for (const auto& entry : fs::directory_iterator(fixture_dir, ec)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        fixtures_.emplace(entry.path().stem().string(), read_file(entry.path()));
    }
    if (ec) throw BackendError(ErrorKind::config, "unreadable fixture directory: " + fixture_dir.string());
}

CompletionResult MockBackend::complete(const CompletionRequest& req) {
    const auto key = fixture_key(req.system_prompt, req.user_prompt);
    auto it = fixtures_.find(key);
    if (it == fixtures_.end()) throw BackendError(ErrorKind::no_fixture, "no fixture for key " + key);
    CompletionResult out;
    out.text = it->second;
    // Whitespace-delimited word counts stand in for tokenizer output.
    auto words = [](std::string_view s) {
        std::int64_t n = 0;
        bool in_word = false;
        for (unsigned char c : s) {
            const bool ws = std::isspace(c) != 0;
            if (!ws && !in_word) ++n;
            in_word = !ws;
        }
        return n;
    };
    out.usage.prompt_tokens = words(req.system_prompt) + words(req.user_prompt);
    out.usage.completion_tokens = words(out.text);
    out.latency_ms = latency_ms_;
    return out;
}

std::optional<BackendKind> parse_backend_kind(std::string_view s) {
    if (s == "mock") return BackendKind::mock;
    if (s == "http_openai_compatible" || s == "http") return BackendKind::http_openai_compatible;
    return std::nullopt;
}

std::string api_key_env_var(std::string_view backend_id) {
    std::string name = "FINESEC_API_KEY_";
    for (unsigned char c : backend_id) name.push_back(std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_');
    return name;
}

namespace {

long long setting_int(const Settings& s, const std::string& key, long long fallback) {
    auto it = s.find(key);
    if (it == s.end()) return fallback;
    try {
        std::size_t used = 0;
        long long v = std::stoll(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("setting '" + key + "' must be an integer, got '" + it->second + "'");
    }
}

}  // namespace

void Client::register_backend(const std::string& id, BackendKind kind, const Settings& settings) {
    if (has_backend(id)) throw ConfigError("duplicate backend id: " + id);
    RetryPolicy retry;
    retry.max_retries = static_cast<int>(setting_int(settings, "max_retries", retry.max_retries));
    retry.base_backoff = std::chrono::milliseconds(setting_int(settings, "backoff_ms", retry.base_backoff.count()));
    const int in_flight = static_cast<int>(setting_int(settings, "max_in_flight", 4));
    if (retry.max_retries < 0) throw ConfigError("max_retries must be non-negative");
    if (in_flight < 1) throw ConfigError("max_in_flight must be at least 1");

    std::unique_ptr<Backend> backend;
    switch (kind) {
    case BackendKind::mock: {
        auto it = settings.find("fixtures");
        if (it == settings.end()) throw ConfigError("mock backend '" + id + "' requires a 'fixtures' setting");
        backend = std::make_unique<MockBackend>(it->second, setting_int(settings, "latency_ms", 0));
        break;
    }
    case BackendKind::http_openai_compatible: {
        auto it = settings.find("endpoint");
        if (it == settings.end() || it->second.empty())
            throw ConfigError("http backend '" + id + "' requires an 'endpoint' setting");
        HttpBackend::Options opts;
        opts.endpoint = it->second;
        if (auto m = settings.find("model"); m != settings.end()) opts.model = m->second;
        opts.timeout = std::chrono::milliseconds(setting_int(settings, "timeout_ms", 60000));
        if (const char* key = std::getenv(api_key_env_var(id).c_str())) opts.api_key = key;
        backend = std::make_unique<HttpBackend>(std::move(opts));
        break;
    }
    }
    add_backend(id, std::move(backend), retry, in_flight);
}

void Client::add_backend(const std::string& id, std::unique_ptr<Backend> backend, RetryPolicy retry,
                         int max_in_flight) {
    if (!backend) throw ConfigError("null backend for id " + id);
    auto s = std::make_unique<Slot>();
    s->backend = std::move(backend);
    s->retry = retry;
    s->max_in_flight = std::max(1, max_in_flight);
    std::lock_guard lock(mu_);
    if (!slots_.emplace(id, std::move(s)).second) throw ConfigError("duplicate backend id: " + id);
}

bool Client::has_backend(const std::string& id) const {
    std::lock_guard lock(mu_);
    return slots_.contains(id);
}

Client::Slot& Client::slot(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = slots_.find(id);
    if (it == slots_.end()) throw BackendError(ErrorKind::config, "unknown backend id: " + id);
    return *it->second;
}

CompletionResult Client::complete(const CompletionRequest& req) {
    req.validate();
    Slot& s = slot(req.backend_id);

    {
        std::unique_lock lock(s.mu);
        s.cv.wait(lock, [&] { return s.in_flight < s.max_in_flight; });
        ++s.in_flight;
    }
    struct Release {
        Slot& s;
        ~Release() {
            {
                std::lock_guard lock(s.mu);
                --s.in_flight;
            }
            s.cv.notify_one();
        }
    } release{s};

    auto backoff = s.retry.base_backoff;
    for (int attempt = 0;; ++attempt) {
        ++s.attempts;
        try {
            return s.backend->complete(req);
        } catch (const BackendError& e) {
            const bool retryable = e.kind() == ErrorKind::transient || e.kind() == ErrorKind::timeout;
            if (!retryable) throw;
            if (attempt >= s.retry.max_retries)
                throw BackendError(ErrorKind::timeout, "backend '" + req.backend_id + "' failed after " +
                                                           std::to_string(attempt + 1) + " attempts: " + e.what());
        }
        std::this_thread::sleep_for(backoff);
        backoff = std::min(backoff * 2, s.retry.max_backoff);
    }
}

std::int64_t Client::attempts(const std::string& id) const { return slot(id).attempts.load(); }

}  // namespace finesec::llm

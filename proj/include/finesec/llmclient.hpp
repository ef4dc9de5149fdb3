// SPDX-License-Identifier: Apache-2.0
//
// Chat-completion transport shared by every agent. Remote models speak the
// OpenAI-compatible chat completions dialect; the mock backend replays
// fixtures keyed by a hash of the prompts, which keeps offline runs exact.
#pragma once

#include "finesec/common.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

namespace finesec::llm {

struct Decoding {
    double temperature = 0.0;
    int max_tokens = 1024;
    std::optional<std::int64_t> seed;
};

struct CompletionRequest {
    std::string system_prompt;
    std::string user_prompt;
    Decoding decoding;
    std::string backend_id;

    void validate() const;
};

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct CompletionResult {
    std::string text;
    Usage usage;
    std::int64_t latency_ms = 0;
};

enum class ErrorKind {
    config,
    auth,
    transient,
    timeout,
    malformed_response,
    rejected,
    no_fixture,
};

std::string to_string(ErrorKind kind);

class BackendError : public Error {
public:
    BackendError(ErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual CompletionResult complete(const CompletionRequest& req) = 0;
};

/// Fixture key for a prompt pair: SHA-256 over system and user prompt joined
/// by a NUL byte.
std::string fixture_key(std::string_view system_prompt, std::string_view user_prompt);

/// Replays `<keyhash>.txt` files from a fixture directory.
class MockBackend final : public Backend {
public:
    explicit MockBackend(const std::filesystem::path& fixture_dir, std::int64_t latency_ms = 0);

    CompletionResult complete(const CompletionRequest& req) override;
    std::size_t fixture_count() const { return fixtures_.size(); }

private:
    std::unordered_map<std::string, std::string> fixtures_;
    std::int64_t latency_ms_;
};

/// OpenAI-compatible chat completions over HTTP(S).
class HttpBackend final : public Backend {
public:
    struct Options {
        std::string endpoint;  // e.g. "https://api.openai.com/v1"
        std::string model;
        std::string api_key;
        std::chrono::milliseconds timeout{60000};
    };

    explicit HttpBackend(Options options);
    CompletionResult complete(const CompletionRequest& req) override;

private:
    Options options_;
};

enum class BackendKind { http_openai_compatible, mock };

std::optional<BackendKind> parse_backend_kind(std::string_view s);

using Settings = std::map<std::string, std::string>;

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_backoff{200};
    std::chrono::milliseconds max_backoff{5000};
};

/// Environment variable holding credentials for a backend id:
/// FINESEC_API_KEY_<ID> with the id upper-cased and non-alphanumerics as '_'.
std::string api_key_env_var(std::string_view backend_id);

/// Registry of named backends with retry and per-backend concurrency limits.
/// complete() may be called from any number of threads.
class Client {
public:
    Client() = default;
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    /// Recognised settings: all kinds take "max_retries", "backoff_ms" and
    /// "max_in_flight" (default 4). mock takes "fixtures" (directory, required)
    /// and "latency_ms". http_openai_compatible takes "endpoint" (required),
    /// "model" and "timeout_ms".
    void register_backend(const std::string& id, BackendKind kind, const Settings& settings);

    /// Registers a caller-provided backend.
    void add_backend(const std::string& id, std::unique_ptr<Backend> backend, RetryPolicy retry = {},
                     int max_in_flight = 4);

    bool has_backend(const std::string& id) const;

    CompletionResult complete(const CompletionRequest& req);

    /// Total attempts issued against a backend, retries included.
    std::int64_t attempts(const std::string& id) const;

private:
    struct Slot {
        std::unique_ptr<Backend> backend;
        RetryPolicy retry;
        int max_in_flight = 4;
        std::mutex mu;
        std::condition_variable cv;
        int in_flight = 0;
        std::atomic<std::int64_t> attempts{0};
    };

    Slot& slot(const std::string& id) const;

    mutable std::mutex mu_;
    std::map<std::string, std::unique_ptr<Slot>> slots_;
};

}  // namespace finesec::llm

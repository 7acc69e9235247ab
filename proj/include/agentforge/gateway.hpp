#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "agentforge/config.hpp"
#include "agentforge/schema.hpp"

namespace agentforge {

enum class FinishReason { Stop, Length, ToolCall };

std::string_view to_string(FinishReason r) noexcept;
FinishReason finish_reason_from_string(std::string_view s);

struct ChatRequest {
    std::string model_tag;
    std::vector<Message> messages;
    int max_tokens = 1024;
    double temperature = 0.0;
    std::optional<std::vector<ToolSpec>> tools;

    json to_json() const;
};

/// For `FinishReason::ToolCall`, `content` is `{"name": ..., "arguments": {...}}`.
struct ChatResponse {
    std::string content;
    FinishReason finish_reason = FinishReason::Stop;
    std::int64_t usage_tokens = 0;

    bool operator==(const ChatResponse&) const = default;
};

json to_json(const ChatResponse& r);
ChatResponse chat_response_from_json(const json& j);

class GatewayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Retryable transport failure (connection refused, timeout, 429, 5xx).
class TransportError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class ScriptExhausted : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class CassetteMiss : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual ChatResponse send(const ChatRequest& request) = 0;
    virtual std::string name() const = 0;
};

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{30000};

    std::chrono::milliseconds backoff_for(int attempt) const;
};

struct GatewayOptions {
    RetryPolicy retry;
    std::size_t max_concurrency = 8;
};

/// Front door for every chat completion. Adds retry with exponential backoff
/// on TransportError, caps in-flight requests, and tallies token usage.
class Gateway {
public:
    explicit Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});

    ChatResponse complete(const ChatRequest& request);

    std::int64_t tokens_used() const noexcept { return tokens_.load(); }
    std::int64_t requests() const noexcept { return requests_.load(); }
    std::int64_t retries() const noexcept { return retries_.load(); }
    Backend& backend() noexcept { return *backend_; }
    const GatewayOptions& options() const noexcept { return options_; }

private:
    class Slot;

    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t in_flight_ = 0;
    std::atomic<std::int64_t> tokens_{0};
    std::atomic<std::int64_t> requests_{0};
    std::atomic<std::int64_t> retries_{0};
};

// ---------------------------------------------------------------------------
// Scripted stub
// ---------------------------------------------------------------------------

struct StubReply {
    std::string content;
    FinishReason finish_reason = FinishReason::Stop;
    std::optional<std::int64_t> usage_tokens;  // estimated from text if unset
    bool transport_failure = false;            // raise TransportError instead of replying
};

/// How a rule picks among its replies on successive matches.
/// Sequence: advance, then repeat the last reply (or stop matching if `exhaust`).
/// Cycle: wrap around.
/// Random: seeded choice keyed on the request text and its occurrence count,
/// so the outcome does not depend on interleaving with unrelated requests.
enum class StubMode { Sequence, Cycle, Random };

struct StubRule {
    std::vector<std::string> patterns;      // all must match the last message
    std::vector<std::string> not_patterns;  // none may match
    std::vector<StubReply> replies;
    StubMode mode = StubMode::Sequence;
    bool exhaust = false;
    bool substitute = false;  // expand $1.. from the first pattern's match
    std::uint64_t seed = 0;
};

/// Deterministic first-match backend for tests and offline runs.
class StubBackend : public Backend {
public:
    explicit StubBackend(std::vector<StubRule> rules);

    /// {"rules": [{"pattern": "..." | [...], "not": [...], "replies": ["..." | {...}],
    ///   "mode": "sequence|cycle|random", "exhaust": bool, "substitute": bool, "seed": n}],
    ///  "latency_ms": n}
    static std::shared_ptr<StubBackend> from_json(const json& script);
    static std::shared_ptr<StubBackend> from_file(const std::filesystem::path& path);

    ChatResponse send(const ChatRequest& request) override;
    std::string name() const override { return "stub"; }

    std::int64_t calls() const;
    void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }

private:
    struct CompiledRule {
        StubRule rule;
        std::vector<std::regex> patterns;
        std::vector<std::regex> not_patterns;
        std::size_t next = 0;
        std::unordered_map<std::uint64_t, std::uint64_t> occurrences;
    };

    std::vector<CompiledRule> rules_;
    mutable std::mutex mu_;
    std::int64_t calls_ = 0;
    std::chrono::milliseconds latency_{0};
};

// ---------------------------------------------------------------------------
// Record / replay cassette
// ---------------------------------------------------------------------------

std::string request_fingerprint(const ChatRequest& request);

/// Record mode forwards to `inner` and appends each exchange to the cassette
/// file; replay mode answers from the file only, in recorded order per
/// identical request.
class CassetteBackend : public Backend {
public:
    enum class Mode { Record, Replay };

    CassetteBackend(std::filesystem::path path, Mode mode, std::shared_ptr<Backend> inner = nullptr);

    ChatResponse send(const ChatRequest& request) override;
    std::string name() const override { return mode_ == Mode::Record ? "record" : "replay"; }

private:
    std::filesystem::path path_;
    Mode mode_;
    std::shared_ptr<Backend> inner_;
    std::mutex mu_;
    std::unordered_map<std::string, std::deque<ChatResponse>> recorded_;
};

// ---------------------------------------------------------------------------
// Remote chat-completions endpoint
// ---------------------------------------------------------------------------

struct RemoteOptions {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string api_key;
    std::chrono::seconds timeout{120};
};

class RemoteBackend : public Backend {
public:
    explicit RemoteBackend(RemoteOptions options);

    ChatResponse send(const ChatRequest& request) override;
    std::string name() const override { return "remote"; }

    /// Wire body for POST {base_url}/chat/completions.
    static json request_body(const ChatRequest& request);
    static ChatResponse parse_response(const json& body);

private:
    RemoteOptions options_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

// ---------------------------------------------------------------------------
// Model roles and construction from config
// ---------------------------------------------------------------------------

struct ModelRoles {
    std::string synthesizer = "Qwen3-235B-A22B-Instruct-2507";
    std::string simulator = "Qwen3-30B-A3B-Instruct-2507";
    std::string judge = "Qwen3-30B-A3B-Instruct-2507";
    std::string teacher = "Qwen3-235B-A22B-Instruct-2507";
    std::string agent = "policy";

    static ModelRoles from_config(const Config& cfg);
};

/// backend = stub | remote | record | replay
/// stub.script, cassette.path, remote.base_url, remote.api_key_env,
/// remote.timeout_s, gateway.max_retries, gateway.backoff_ms,
/// gateway.max_concurrency
std::shared_ptr<Backend> make_backend(const Config& cfg);
GatewayOptions gateway_options_from_config(const Config& cfg);

}  // namespace agentforge

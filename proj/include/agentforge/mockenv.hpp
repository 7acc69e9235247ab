#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "agentforge/gateway.hpp"
#include "agentforge/schema.hpp"

namespace agentforge {

// ---------------------------------------------------------------------------
// Consistency mapping
// ---------------------------------------------------------------------------

/// Append-only table of (canonical call, response) pairs for one task. All
/// mutations go through `commit`, which is an atomic check-then-append.
class ConsistencyMap {
public:
    struct Entry {
        CanonicalCall call;
        std::string response;

        bool operator==(const Entry&) const = default;
    };

    enum class Outcome {
        Appended,  // new entry stored
        Existing,  // an identical canonical call was already present
        Stale,     // the map grew past `expected_size`; caller should re-check
    };

    struct Commit {
        Outcome outcome;
        std::string response;
    };

    explicit ConsistencyMap(std::string task_id) : task_id_(std::move(task_id)) {}

    const std::string& task_id() const noexcept { return task_id_; }

    std::optional<std::string> lookup(const CanonicalCall& call) const;
    std::vector<Entry> snapshot() const;
    std::size_t size() const;

    /// Appends unless an identical call exists. With `expected_size` set, a
    /// map that has grown since the caller's snapshot yields `Stale` instead
    /// of appending.
    Commit commit(const CanonicalCall& call, std::string response,
                  std::optional<std::size_t> expected_size = std::nullopt);

    json to_json() const;

private:
    std::string task_id_;
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Which sessions share a map: all sessions with the same group share one;
/// a scope without a group gets a private map.
struct MapScope {
    std::optional<std::string> group;

    static MapScope fresh() { return {}; }
    static MapScope shared(std::string group) { return {std::move(group)}; }
};

class MapRegistry {
public:
    /// With `persist_across_groups`, every group of a task shares a single map.
    explicit MapRegistry(bool persist_across_groups = false) : persist_(persist_across_groups) {}

    std::shared_ptr<ConsistencyMap> attach(const std::string& task_id, const MapScope& scope);

    struct Record {
        std::string scope_key;
        std::shared_ptr<ConsistencyMap> map;
    };
    std::vector<Record> all() const;

private:
    bool persist_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<ConsistencyMap>> maps_;
    std::size_t fresh_counter_ = 0;
};

// ---------------------------------------------------------------------------
// Agent messages and sessions
// ---------------------------------------------------------------------------

struct RawToolCall {
    std::string name;
    json arguments = json::object();
    bool arguments_valid = true;  // false when arguments were not parseable JSON
};

struct AgentMessage {
    std::string content;
    std::optional<RawToolCall> tool_call;

    static AgentMessage text(std::string content);
    static AgentMessage call(std::string name, json arguments);
    static AgentMessage from_chat_response(const ChatResponse& response);
};

/// Wire form: {"content": "...", "tool_call": {"name": "...", "arguments": {...} | "<json text>"}}
json to_json(const AgentMessage& m);
AgentMessage agent_message_from_json(const json& j);

enum class SessionStatus { Active, Answered, TurnLimit, Error };

std::string_view to_string(SessionStatus s) noexcept;

struct Session {
    std::string id;
    std::shared_ptr<const SynthTask> task;
    std::shared_ptr<ConsistencyMap> map;
    std::vector<Message> transcript;
    int turns_used = 0;
    SessionStatus status = SessionStatus::Active;
    std::optional<std::string> final_answer;
    int user_queries = 0;
    int tool_calls = 0;

    bool active() const noexcept { return status == SessionStatus::Active; }
    Trajectory trajectory(std::string trajectory_id = {}) const;
};

class SessionTerminated : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class ReplyKind { ToolResponse, UserReply, Terminal };

std::string_view to_string(ReplyKind k) noexcept;

struct EnvReply {
    ReplyKind kind = ReplyKind::UserReply;
    std::string content;
    bool map_hit = false;
    std::optional<TerminationReason> reason;  // set iff kind == Terminal
    int turns_used = 0;
    int turns_remaining = 0;

    bool operator==(const EnvReply&) const = default;
};

json to_json(const EnvReply& r);

struct EnvConfig {
    int max_turns = 16;
    int max_message_tokens = 13000;
    int simulator_attempts = 3;
    int optimistic_retries = 3;
    std::string tool_model = ModelRoles{}.simulator;
    std::string user_model = ModelRoles{}.simulator;
    double simulator_temperature = 0.0;
    int simulator_max_tokens = 1024;

    static EnvConfig from_config(const Config& cfg);
};

inline constexpr std::string_view kUserFallbackReply = "I'm not sure.";

/// LLM-simulated mock environment: tools answer through the consistency map,
/// the user answers from the hidden context.
class Environment {
public:
    Environment(Gateway& gateway, EnvConfig config, std::shared_ptr<MapRegistry> maps);

    /// Transcript starts as [system, user(instruction)]. The hidden context
    /// never enters the transcript.
    Session reset(std::shared_ptr<const SynthTask> task, const MapScope& scope);

    /// Dispatches one assistant turn. Throws SessionTerminated when the
    /// session is no longer active.
    EnvReply step(Session& session, const AgentMessage& message);

    struct ToolResult {
        std::string response;
        bool map_hit = false;
    };
    ToolResult simulate_tool(Session& session, const CanonicalCall& call);
    std::string simulate_user(Session& session, std::string_view question);

    std::string system_prompt(const SynthTask& task) const;

    const EnvConfig& config() const noexcept { return config_; }
    MapRegistry& maps() noexcept { return *maps_; }
    Gateway& gateway() noexcept { return gateway_; }

private:
    EnvReply terminal(Session& s, TerminationReason reason, std::string content);
    EnvReply reply(Session& s, ReplyKind kind, std::string content, bool map_hit);
    void append(Session& s, Role role, std::string content, std::optional<CanonicalCall> call = std::nullopt);

    Gateway& gateway_;
    EnvConfig config_;
    std::shared_ptr<MapRegistry> maps_;
    std::atomic<std::uint64_t> session_counter_{0};
};

/// Argument check for a call against its spec; returns the error text shown
/// to the agent, or nullopt when the call is well-formed.
std::optional<std::string> check_tool_call(const SynthTask& task, const RawToolCall& call);

// ---------------------------------------------------------------------------
// Agents and rollouts
// ---------------------------------------------------------------------------

class AgentPolicy {
public:
    virtual ~AgentPolicy() = default;
    virtual AgentMessage act(const Session& session) = 0;
};

/// Replays a fixed list of messages, repeating the last one when exhausted.
class ScriptedAgent : public AgentPolicy {
public:
    explicit ScriptedAgent(std::vector<AgentMessage> script) : script_(std::move(script)) {}
    AgentMessage act(const Session& session) override;

private:
    std::vector<AgentMessage> script_;
    std::size_t next_ = 0;
};

/// Policy backed by a chat model that sees exactly the agent-visible transcript.
class LlmAgent : public AgentPolicy {
public:
    LlmAgent(Gateway& gateway, std::string model, double temperature = 1.0, int max_tokens = 13000)
        : gateway_(gateway), model_(std::move(model)), temperature_(temperature), max_tokens_(max_tokens) {}
    AgentMessage act(const Session& session) override;

private:
    Gateway& gateway_;
    std::string model_;
    double temperature_;
    int max_tokens_;
};

using AgentFactory = std::function<std::unique_ptr<AgentPolicy>()>;

/// Runs one session to termination. Agent-side gateway failures end the
/// session with reason `error`.
Trajectory run_episode(Environment& env, Session& session, AgentPolicy& agent, std::string trajectory_id);

/// `n` sequential rollouts of one task sharing the group's consistency map.
std::vector<Trajectory> run_group(Environment& env, std::shared_ptr<const SynthTask> task,
                                  const std::string& group_id, int n, const AgentFactory& make_agent);

}  // namespace agentforge

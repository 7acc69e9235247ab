#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "agentforge/gateway.hpp"
#include "agentforge/mockenv.hpp"
#include "agentforge/reward.hpp"
#include "agentforge/stats.hpp"

namespace httplib {
class Server;
}

namespace agentforge {

inline constexpr std::string_view kProtocolVersion = "1";

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    EnvConfig env;
    JudgeConfig judge;
    bool persist_maps = false;
    std::optional<std::filesystem::path> snapshot_path;  // written on stop()

    static ServiceOptions from_config(const Config& cfg);
};

/// Error surfaced to clients as {"error": {"code", "message"}} with `status`.
class ApiError : public std::runtime_error {
public:
    ApiError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status_(status), code_(std::move(code)) {}
    int status() const noexcept { return status_; }
    const std::string& code() const noexcept { return code_; }

private:
    int status_;
    std::string code_;
};

/// Rollout API for external trainers.
///
///   POST /tasks               {"tasks": [...], "rubrics": [...]}      -> {"task_ids": [...]}
///   POST /sessions            {"task_id", "group_id"?}                 -> {"session_id", "system_prompt", ...}
///   POST /sessions/{id}/step  {"agent_message": {...}}                 -> EnvReply
///   GET  /sessions/{id}                                                -> session state and trajectory
///   POST /judge               {"session_id"} | {"trajectory": {...}}   -> RewardReport
///   GET  /stats                                                        -> CorpusStats
///   GET  /version                                                      -> {"protocol": "1", ...}
///
/// Every body is {"result": ...} or {"error": {"code", "message"}}.
class RolloutService {
public:
    RolloutService(Gateway& gateway, ServiceOptions options);
    ~RolloutService();

    RolloutService(const RolloutService&) = delete;
    RolloutService& operator=(const RolloutService&) = delete;

    struct Response {
        int status = 200;
        json body;
    };

    /// Transport-independent entry point used by the HTTP handlers.
    Response dispatch(const std::string& method, const std::string& path, const std::string& body);

    /// Binds the HTTP listener; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks serving requests until stop().
    void serve();
    void stop();

    Environment& environment() noexcept { return env_; }
    Judge& judge() noexcept { return judge_; }
    CorpusStats stats() const;

private:
    struct SessionSlot {
        std::mutex mu;
        Session session;
    };

    json register_tasks(const json& body);
    json create_session(const json& body);
    json step_session(const std::string& id, const json& body);
    json get_session(const std::string& id);
    json judge_request(const json& body);
    std::shared_ptr<SessionSlot> find_session(const std::string& id);
    void write_snapshot(const std::filesystem::path& path) const;

    Gateway& gateway_;
    ServiceOptions options_;
    std::shared_ptr<MapRegistry> maps_;
    Environment env_;
    Judge judge_;

    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<const SynthTask>> tasks_;
    std::map<std::string, Rubric> rubrics_;
    std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;

    std::unique_ptr<httplib::Server> server_;
};

}  // namespace agentforge

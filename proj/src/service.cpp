#include "agentforge/service.hpp"

#include <regex>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "agentforge/serialize.hpp"

namespace agentforge {

ServiceOptions ServiceOptions::from_config(const Config& cfg) {
    ServiceOptions o;
    o.host = cfg.get_string("service.host", o.host);
    o.port = static_cast<int>(cfg.get_int("service.port", o.port));
    o.env = EnvConfig::from_config(cfg);
    o.judge = JudgeConfig::from_config(cfg);
    o.persist_maps = cfg.get_bool("env.persist_maps", o.persist_maps);
    if (auto p = cfg.get("service.snapshot")) o.snapshot_path = *p;
    return o;
}

RolloutService::RolloutService(Gateway& gateway, ServiceOptions options)
    : gateway_(gateway),
      options_(std::move(options)),
      maps_(std::make_shared<MapRegistry>(options_.persist_maps)),
      env_(gateway, options_.env, maps_),
      judge_(gateway, options_.judge) {}

RolloutService::~RolloutService() { stop(); }

namespace {

json parse_body(const std::string& body) {
    if (body.empty()) return json::object();
    try {
        auto j = json::parse(body);
        if (!j.is_object()) throw ApiError(400, "BadRequest", "request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ApiError(400, "BadRequest", std::string("malformed JSON: ") + e.what());
    }
}

std::string required_string(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || !it->is_string() || it->get<std::string>().empty())
        throw ApiError(400, "ValidationError", std::string("missing field '") + key + "'");
    return it->get<std::string>();
}

json error_body(const std::string& code, const std::string& message) {
    return json{{"error", {{"code", code}, {"message", message}}}};
}

}  // namespace

RolloutService::Response RolloutService::dispatch(const std::string& method, const std::string& path,
                                                  const std::string& body) {
    static const std::regex step_route(R"(^/sessions/([^/]+)/step$)");
    static const std::regex session_route(R"(^/sessions/([^/]+)$)");
    try {
        json result;
        std::smatch m;
        if (method == "POST" && path == "/tasks") result = register_tasks(parse_body(body));
        else if (method == "POST" && path == "/sessions") result = create_session(parse_body(body));
        else if (method == "POST" && std::regex_match(path, m, step_route)) result = step_session(m[1], parse_body(body));
        else if (method == "GET" && std::regex_match(path, m, session_route)) result = get_session(m[1]);
        else if (method == "POST" && path == "/judge") result = judge_request(parse_body(body));
        else if (method == "GET" && path == "/stats") result = to_json(stats());
        else if (method == "GET" && path == "/version")
            result = json{{"name", "agentforge"}, {"protocol", std::string(kProtocolVersion)}};
        else throw ApiError(404, "NotFound", method + " " + path + " is not an endpoint");
        return {200, json{{"result", std::move(result)}}};
    } catch (const ApiError& e) {
        return {e.status(), error_body(e.code(), e.what())};
    } catch (const ValidationError& e) {
        auto body = error_body("ValidationError", e.what());
        body["error"]["path"] = e.path();
        body["error"]["rule"] = std::string(to_string(e.rule()));
        return {400, body};
    } catch (const json::exception& e) {
        return {400, error_body("ValidationError", e.what())};
    } catch (const SessionTerminated& e) {
        return {409, error_body("SessionTerminated", e.what())};
    } catch (const GatewayError& e) {
        return {502, error_body("GatewayError", e.what())};
    } catch (const std::exception& e) {
        spdlog::error("{} {} failed: {}", method, path, e.what());
        return {500, error_body("Internal", e.what())};
    }
}

json RolloutService::register_tasks(const json& body) {
    if (!body.contains("tasks") || !body.at("tasks").is_array())
        throw ApiError(400, "ValidationError", "'tasks' must be a list");

    std::vector<std::shared_ptr<const SynthTask>> tasks;
    for (std::size_t i = 0; i < body.at("tasks").size(); ++i) {
        SynthTask t;
        try {
            t = body.at("tasks")[i].get<SynthTask>();
            validate_task(t);
        } catch (const ValidationError& e) {
            throw ValidationError(e.rule(), "tasks[" + std::to_string(i) + "]" + (e.path().empty() ? "" : "." + e.path()),
                                  e.detail());
        }
        const auto id = compute_task_id(t);
        if (!t.task_id.empty() && t.task_id != id)
            throw ApiError(400, "ValidationError",
                           "tasks[" + std::to_string(i) + "].task_id does not match its content hash " + id);
        t.task_id = id;
        tasks.push_back(std::make_shared<const SynthTask>(std::move(t)));
    }
    std::vector<Rubric> rubrics;
    if (body.contains("rubrics"))
        for (const auto& r : body.at("rubrics")) rubrics.push_back(r.get<Rubric>());

    std::lock_guard lock(mu_);
    std::map<std::string, std::shared_ptr<const SynthTask>> staged;
    for (const auto& t : tasks) {
        for (const auto* pool : {&tasks_, &staged}) {
            auto it = pool->find(t->task_id);
            if (it != pool->end() && !(*it->second == *t))
                throw ApiError(409, "ConflictingContent", "task " + t->task_id + " already registered with other content");
        }
        staged.emplace(t->task_id, t);
    }
    std::map<std::string, Rubric> staged_rubrics;
    for (auto& r : rubrics) {
        const SynthTask* task = nullptr;
        if (auto it = staged.find(r.task_id); it != staged.end()) task = it->second.get();
        else if (auto it2 = tasks_.find(r.task_id); it2 != tasks_.end()) task = it2->second.get();
        if (task == nullptr) throw ApiError(400, "ValidationError", "rubric refers to unknown task " + r.task_id);
        if (r.forbidden != task->forbidden)
            throw ApiError(400, "ValidationError", "rubric forbidden behaviors differ from task " + r.task_id);
        for (const auto* pool : {&rubrics_, &staged_rubrics}) {
            auto it = pool->find(r.task_id);
            if (it != pool->end() && !(it->second == r))
                throw ApiError(409, "ConflictingContent", "rubric for task " + r.task_id + " differs from the registered one");
        }
        staged_rubrics.emplace(r.task_id, std::move(r));
    }
    tasks_.insert(staged.begin(), staged.end());
    rubrics_.insert(staged_rubrics.begin(), staged_rubrics.end());

    json ids = json::array();
    for (const auto& t : tasks) ids.push_back(t->task_id);
    return json{{"task_ids", ids}, {"rubrics", staged_rubrics.size()}};
}

json RolloutService::create_session(const json& body) {
    const auto task_id = required_string(body, "task_id");
    std::shared_ptr<const SynthTask> task;
    {
        std::lock_guard lock(mu_);
        auto it = tasks_.find(task_id);
        if (it == tasks_.end()) throw ApiError(404, "UnknownTask", "no task '" + task_id + "'");
        task = it->second;
    }
    MapScope scope = MapScope::fresh();
    if (auto g = body.find("group_id"); g != body.end() && g->is_string() && !g->get<std::string>().empty())
        scope = MapScope::shared(g->get<std::string>());

    auto slot = std::make_shared<SessionSlot>();
    slot->session = env_.reset(task, scope);
    const auto& s = slot->session;
    json out{{"session_id", s.id},
             {"task_id", task_id},
             {"system_prompt", s.transcript.front().content},
             {"instruction", task->instruction},
             {"tools", task->toolset},
             {"max_turns", options_.env.max_turns}};
    std::lock_guard lock(mu_);
    sessions_.emplace(s.id, std::move(slot));
    return out;
}

std::shared_ptr<RolloutService::SessionSlot> RolloutService::find_session(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(404, "UnknownSession", "no session '" + id + "'");
    return it->second;
}

json RolloutService::step_session(const std::string& id, const json& body) {
    auto slot = find_session(id);
    std::unique_lock lock(slot->mu, std::try_to_lock);
    if (!lock.owns_lock()) throw ApiError(409, "SessionBusy", "session '" + id + "' already has a step in flight");
    if (!body.contains("agent_message")) throw ApiError(400, "ValidationError", "missing field 'agent_message'");
    auto message = agent_message_from_json(body.at("agent_message"));
    auto reply = env_.step(slot->session, message);
    auto out = to_json(reply);
    out["session_id"] = id;
    out["status"] = std::string(to_string(slot->session.status));
    return out;
}

json RolloutService::get_session(const std::string& id) {
    auto slot = find_session(id);
    std::lock_guard lock(slot->mu);
    const auto& s = slot->session;
    return json{{"session_id", s.id},          {"task_id", s.task->task_id}, {"status", std::string(to_string(s.status))},
                {"turns_used", s.turns_used},  {"trajectory", s.trajectory()}};
}

json RolloutService::judge_request(const json& body) {
    Trajectory trajectory;
    if (auto sid = body.find("session_id"); sid != body.end()) {
        auto slot = find_session(required_string(body, "session_id"));
        std::lock_guard lock(slot->mu);
        trajectory = slot->session.trajectory();
    } else if (body.contains("trajectory")) {
        trajectory = body.at("trajectory").get<Trajectory>();
    } else {
        throw ApiError(400, "ValidationError", "expected 'session_id' or 'trajectory'");
    }
    Rubric rubric;
    {
        std::lock_guard lock(mu_);
        auto it = rubrics_.find(trajectory.task_id);
        if (it == rubrics_.end()) throw ApiError(404, "UnknownRubric", "no rubric for task '" + trajectory.task_id + "'");
        rubric = it->second;
    }
    return json(judge_.compute_reward(trajectory, rubric));
}

CorpusStats RolloutService::stats() const {
    CorpusInputs in;
    std::vector<std::shared_ptr<SessionSlot>> slots;
    {
        std::lock_guard lock(mu_);
        for (const auto& [_, t] : tasks_) in.tasks.push_back(*t);
        for (const auto& [_, s] : sessions_) slots.push_back(s);
    }
    for (const auto& slot : slots) {
        std::lock_guard lock(slot->mu);
        in.trajectories.push_back(slot->session.trajectory());
    }
    for (const auto& rec : maps_->all()) in.map_sizes.push_back(rec.map->size());
    in.total_tokens = gateway_.tokens_used();
    return compute_stats(in);
}

void RolloutService::write_snapshot(const std::filesystem::path& path) const {
    std::vector<std::shared_ptr<SessionSlot>> slots;
    {
        std::lock_guard lock(mu_);
        for (const auto& [_, s] : sessions_) slots.push_back(s);
    }
    json sessions = json::array();
    for (const auto& slot : slots) {
        std::lock_guard lock(slot->mu);
        sessions.push_back({{"status", std::string(to_string(slot->session.status))},
                            {"trajectory", slot->session.trajectory()}});
    }
    json maps = json::array();
    for (const auto& rec : maps_->all())
        maps.push_back({{"scope", rec.scope_key}, {"map", rec.map->to_json()}});
    write_file_atomic(path, json{{"sessions", sessions}, {"maps", maps}}.dump(2) + "\n");
}

int RolloutService::bind(const std::string& host, int port) {
    server_ = std::make_unique<httplib::Server>();
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        auto r = dispatch(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server_->Get(R"(/.*)", handler);
    server_->Post(R"(/.*)", handler);
    if (port == 0) return server_->bind_to_any_port(host);
    if (!server_->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void RolloutService::serve() {
    if (!server_) bind(options_.host, options_.port);
    server_->listen_after_bind();
}

void RolloutService::stop() {
    if (server_) server_->stop();
    if (options_.snapshot_path) {
        try {
            write_snapshot(*options_.snapshot_path);
        } catch (const std::exception& e) {
            spdlog::error("snapshot failed: {}", e.what());
        }
        options_.snapshot_path.reset();
    }
}

}  // namespace agentforge

#include "agentforge/mockenv.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include <spdlog/spdlog.h>

#include "agentforge/prompts.hpp"
#include "agentforge/serialize.hpp"
#include "agentforge/text.hpp"

namespace agentforge {

// ---------------------------------------------------------------------------
// ConsistencyMap / MapRegistry
// ---------------------------------------------------------------------------

std::optional<std::string> ConsistencyMap::lookup(const CanonicalCall& call) const {
    std::lock_guard lock(mu_);
    if (auto it = index_.find(call.key()); it != index_.end()) return entries_[it->second].response;
    return std::nullopt;
}

std::vector<ConsistencyMap::Entry> ConsistencyMap::snapshot() const {
    std::lock_guard lock(mu_);
    return entries_;
}

std::size_t ConsistencyMap::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

ConsistencyMap::Commit ConsistencyMap::commit(const CanonicalCall& call, std::string response,
                                              std::optional<std::size_t> expected_size) {
    std::lock_guard lock(mu_);
    const auto key = call.key();
    if (auto it = index_.find(key); it != index_.end()) return {Outcome::Existing, entries_[it->second].response};
    if (expected_size && *expected_size != entries_.size()) return {Outcome::Stale, {}};
    index_.emplace(key, entries_.size());
    entries_.push_back({call, response});
    return {Outcome::Appended, std::move(response)};
}

json ConsistencyMap::to_json() const {
    std::lock_guard lock(mu_);
    json entries = json::array();
    for (const auto& e : entries_) entries.push_back({{"call", e.call}, {"response", e.response}});
    return json{{"task_id", task_id_}, {"size", entries_.size()}, {"entries", entries}};
}

std::shared_ptr<ConsistencyMap> MapRegistry::attach(const std::string& task_id, const MapScope& scope) {
    std::lock_guard lock(mu_);
    std::string key;
    if (persist_) key = task_id + "|*";
    else if (scope.group) key = task_id + "|" + *scope.group;
    else key = task_id + "|#" + std::to_string(fresh_counter_++);
    auto& slot = maps_[key];
    if (!slot) slot = std::make_shared<ConsistencyMap>(task_id);
    return slot;
}

std::vector<MapRegistry::Record> MapRegistry::all() const {
    std::lock_guard lock(mu_);
    std::vector<Record> out;
    for (const auto& [k, m] : maps_) out.push_back({k, m});
    return out;
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

AgentMessage AgentMessage::text(std::string content) { return AgentMessage{std::move(content), std::nullopt}; }

AgentMessage AgentMessage::call(std::string name, json arguments) {
    AgentMessage m;
    m.tool_call = RawToolCall{std::move(name), std::move(arguments), true};
    m.content = json{{"name", m.tool_call->name}, {"arguments", m.tool_call->arguments}}.dump();
    return m;
}

namespace {

RawToolCall raw_call_from_json(const json& j) {
    RawToolCall call;
    if (!j.is_object()) {
        call.arguments_valid = false;
        return call;
    }
    if (auto n = j.find("name"); n != j.end() && n->is_string()) call.name = n->get<std::string>();
    auto args = j.find("arguments");
    if (args == j.end()) args = j.find("args");
    if (args == j.end() || args->is_null()) {
        call.arguments = json::object();
    } else if (args->is_string()) {
        try {
            call.arguments = json::parse(args->get<std::string>());
        } catch (const json::exception&) {
            call.arguments = *args;
            call.arguments_valid = false;
        }
    } else {
        call.arguments = *args;
    }
    if (!call.arguments.is_object()) call.arguments_valid = false;
    return call;
}

std::optional<RawToolCall> parse_text_tool_call(const std::string& content) {
    if (content.find("<tool_call>") == std::string::npos) return std::nullopt;
    auto body = extract_tag(content, "tool_call");
    if (!body) return RawToolCall{"", json::object(), false};
    try {
        return raw_call_from_json(json::parse(*body));
    } catch (const json::exception&) {
        return RawToolCall{"", json::object(), false};
    }
}

}  // namespace

AgentMessage AgentMessage::from_chat_response(const ChatResponse& response) {
    AgentMessage m;
    m.content = response.content;
    if (response.finish_reason == FinishReason::ToolCall) {
        try {
            m.tool_call = raw_call_from_json(json::parse(response.content));
        } catch (const json::exception&) {
            m.tool_call = RawToolCall{"", json::object(), false};
        }
    }
    return m;
}

json to_json(const AgentMessage& m) {
    json j{{"content", m.content}};
    if (m.tool_call) j["tool_call"] = {{"name", m.tool_call->name}, {"arguments", m.tool_call->arguments}};
    return j;
}

AgentMessage agent_message_from_json(const json& j) {
    if (j.is_string()) return AgentMessage::text(j.get<std::string>());
    AgentMessage m;
    if (auto c = j.find("content"); c != j.end() && c->is_string()) m.content = c->get<std::string>();
    if (auto t = j.find("tool_call"); t != j.end() && !t->is_null()) {
        m.tool_call = raw_call_from_json(*t);
        if (m.content.empty()) m.content = t->dump();
    }
    return m;
}

std::string_view to_string(SessionStatus s) noexcept {
    switch (s) {
    case SessionStatus::Active: return "active";
    case SessionStatus::Answered: return "done_answered";
    case SessionStatus::TurnLimit: return "done_turn_limit";
    case SessionStatus::Error: return "done_error";
    }
    return "done_error";
}

std::string_view to_string(ReplyKind k) noexcept {
    switch (k) {
    case ReplyKind::ToolResponse: return "tool_response";
    case ReplyKind::UserReply: return "user_reply";
    case ReplyKind::Terminal: return "terminal";
    }
    return "terminal";
}

json to_json(const EnvReply& r) {
    json j{{"kind", std::string(to_string(r.kind))}, {"content", r.content}};
    if (r.kind == ReplyKind::ToolResponse) j["map_hit"] = r.map_hit;
    if (r.reason) j["terminated_reason"] = std::string(to_string(*r.reason));
    j["turns_used"] = r.turns_used;
    j["turns_remaining"] = r.turns_remaining;
    return j;
}

Trajectory Session::trajectory(std::string trajectory_id) const {
    Trajectory t;
    t.id = trajectory_id.empty() ? id : std::move(trajectory_id);
    t.task_id = task->task_id;
    t.messages = transcript;
    t.final_answer = final_answer;
    switch (status) {
    case SessionStatus::Answered: t.terminated = TerminationReason::Answered; break;
    case SessionStatus::TurnLimit: t.terminated = TerminationReason::TurnLimit; break;
    // An unfinished session is reported like an aborted one.
    case SessionStatus::Active:
    case SessionStatus::Error: t.terminated = TerminationReason::Error; break;
    }
    return t;
}

EnvConfig EnvConfig::from_config(const Config& cfg) {
    EnvConfig c;
    auto roles = ModelRoles::from_config(cfg);
    c.max_turns = static_cast<int>(cfg.get_int("env.max_turns", c.max_turns));
    c.max_message_tokens = static_cast<int>(cfg.get_int("env.max_message_tokens", c.max_message_tokens));
    c.simulator_attempts = static_cast<int>(cfg.get_int("env.simulator_attempts", c.simulator_attempts));
    c.tool_model = cfg.get_string("model.tool_simulator", roles.simulator);
    c.user_model = cfg.get_string("model.user_simulator", roles.simulator);
    c.simulator_temperature = cfg.get_double("env.simulator_temperature", c.simulator_temperature);
    if (c.max_turns < 1) throw std::invalid_argument("env.max_turns must be positive");
    return c;
}

// ---------------------------------------------------------------------------
// Argument checks
// ---------------------------------------------------------------------------

namespace {

bool matches_type(const json& v, SemanticType t) {
    switch (t) {
    case SemanticType::String: return v.is_string();
    case SemanticType::Number: return v.is_number();
    case SemanticType::Integer:
        return v.is_number_integer() || (v.is_number_float() && std::trunc(v.get<double>()) == v.get<double>());
    case SemanticType::Boolean: return v.is_boolean();
    case SemanticType::Array: return v.is_array();
    case SemanticType::Object: return v.is_object();
    }
    return false;
}

std::string tool_names(const SynthTask& task) {
    std::string out;
    for (const auto& t : task.toolset) out += (out.empty() ? "" : ", ") + t.name;
    return out;
}

}  // namespace

std::optional<std::string> check_tool_call(const SynthTask& task, const RawToolCall& call) {
    const ToolSpec* spec = task.find_tool(trim(call.name));
    if (spec == nullptr)
        return "Error: unknown tool '" + call.name + "'. Available tools: " + tool_names(task) + ".";
    if (!call.arguments_valid || !call.arguments.is_object())
        return "Error: arguments for " + spec->name + " must be a JSON object.";
    for (const auto& p : spec->parameters)
        if (p.required && !call.arguments.contains(p.name))
            return "Error: missing required parameter '" + p.name + "' for " + spec->name + ".";
    for (const auto& [k, v] : call.arguments.items()) {
        const ParameterSpec* p = spec->find_parameter(k);
        if (p == nullptr) return "Error: unexpected parameter '" + k + "' for " + spec->name + ".";
        if (!v.is_null() && !matches_type(v, p->type))
            return "Error: parameter '" + k + "' of " + spec->name + " must be of type " +
                   std::string(to_string(p->type)) + ".";
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

Environment::Environment(Gateway& gateway, EnvConfig config, std::shared_ptr<MapRegistry> maps)
    : gateway_(gateway), config_(std::move(config)), maps_(std::move(maps)) {
    if (!maps_) maps_ = std::make_shared<MapRegistry>();
}

std::string Environment::system_prompt(const SynthTask& task) const {
    json tools = json::array();
    for (const auto& t : task.toolset) tools.push_back({{"type", "function"}, {"function", t}});
    return render_template(prompt("agent_system").system,
                           {{"tools", tools.dump(2)}, {"instruction", task.instruction}});
}

Session Environment::reset(std::shared_ptr<const SynthTask> task, const MapScope& scope) {
    if (!task) throw std::invalid_argument("reset requires a task");
    validate_task(*task);
    Session s;
    s.id = "s" + std::to_string(++session_counter_);
    s.task = task;
    s.map = maps_->attach(task->task_id, scope);
    append(s, Role::System, system_prompt(*task));
    append(s, Role::User, task->instruction);
    return s;
}

void Environment::append(Session& s, Role role, std::string content, std::optional<CanonicalCall> call) {
    Message m;
    m.role = role;
    m.content = std::move(content);
    m.call = std::move(call);
    m.turn = static_cast<int>(s.transcript.size());
    s.transcript.push_back(std::move(m));
}

EnvReply Environment::reply(Session& s, ReplyKind kind, std::string content, bool map_hit) {
    EnvReply r;
    r.kind = kind;
    r.content = std::move(content);
    r.map_hit = map_hit;
    r.turns_used = s.turns_used;
    r.turns_remaining = std::max(0, config_.max_turns - s.turns_used);
    return r;
}

EnvReply Environment::terminal(Session& s, TerminationReason reason, std::string content) {
    switch (reason) {
    case TerminationReason::Answered: s.status = SessionStatus::Answered; break;
    case TerminationReason::TurnLimit: s.status = SessionStatus::TurnLimit; break;
    case TerminationReason::Error: s.status = SessionStatus::Error; break;
    }
    EnvReply r = reply(s, ReplyKind::Terminal, std::move(content), false);
    r.reason = reason;
    return r;
}

EnvReply Environment::step(Session& s, const AgentMessage& message) {
    if (!s.active()) throw SessionTerminated("session " + s.id + " is " + std::string(to_string(s.status)));
    ++s.turns_used;

    std::string content = message.content;
    const auto max_chars = static_cast<std::size_t>(config_.max_message_tokens) * 4;
    if (content.size() > max_chars) content.resize(max_chars);

    std::optional<RawToolCall> call = message.tool_call;
    if (!call) call = parse_text_tool_call(content);
    const bool at_limit = s.turns_used >= config_.max_turns;

    try {
        if (call) {
            auto error = check_tool_call(*s.task, *call);
            CanonicalCall canonical = canonicalize_call(
                call->name, call->arguments.is_object() ? call->arguments : json::object());
            append(s, Role::ToolCall, content, canonical);
            ++s.tool_calls;
            if (at_limit) return terminal(s, TerminationReason::TurnLimit, "turn_limit");
            if (error) {
                append(s, Role::ToolResponse, *error);
                return reply(s, ReplyKind::ToolResponse, *error, false);
            }
            auto result = simulate_tool(s, canonical);
            append(s, Role::ToolResponse, result.response);
            return reply(s, ReplyKind::ToolResponse, result.response, result.map_hit);
        }

        if (auto answer = extract_tag(content, "answer")) {
            append(s, Role::Assistant, content);
            s.final_answer = std::string(trim(*answer));
            return terminal(s, TerminationReason::Answered, *s.final_answer);
        }

        append(s, Role::Assistant, content);
        if (at_limit) return terminal(s, TerminationReason::TurnLimit, "turn_limit");
        ++s.user_queries;
        auto answer = simulate_user(s, content);
        append(s, Role::User, answer);
        return reply(s, ReplyKind::UserReply, answer, false);
    } catch (const GatewayError& e) {
        spdlog::error("session {}: simulator unavailable: {}", s.id, e.what());
        return terminal(s, TerminationReason::Error, std::string("simulator unavailable: ") + e.what());
    }
}

namespace {

struct SimulatorVerdict {
    enum class Kind { Match, New } kind;
    std::size_t index = 0;
    std::string body;
};

std::optional<SimulatorVerdict> parse_simulator_output(const std::string& text, std::size_t map_size) {
    static const std::regex match_line(R"(^MATCH\s+\[?(\d+)\]?\s*$)");
    auto body = std::string(trim(text));
    auto eol = body.find('\n');
    auto first = std::string(trim(body.substr(0, eol)));
    std::smatch m;
    if (std::regex_match(first, m, match_line)) {
        auto index = std::stoull(m[1].str());
        if (index >= map_size) return std::nullopt;
        return SimulatorVerdict{SimulatorVerdict::Kind::Match, static_cast<std::size_t>(index), {}};
    }
    if (first.rfind("NEW", 0) != 0) return std::nullopt;
    std::string rest = std::string(trim(first.substr(3)));
    if (eol != std::string::npos) {
        auto tail = std::string(trim(body.substr(eol + 1)));
        rest = rest.empty() ? tail : rest + "\n" + tail;
    }
    if (rest.empty()) return std::nullopt;
    return SimulatorVerdict{SimulatorVerdict::Kind::New, 0, rest};
}

std::string render_mapping(const std::vector<ConsistencyMap::Entry>& entries) {
    if (entries.empty()) return "(none)";
    std::string out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        out += std::to_string(i) + ": " + entries[i].call.tool + "(" + entries[i].call.args.dump() + ") => " +
               entries[i].response + "\n";
    return out;
}

}  // namespace

Environment::ToolResult Environment::simulate_tool(Session& s, const CanonicalCall& call) {
    const ToolSpec* spec = s.task->find_tool(call.tool);
    if (spec == nullptr) throw UnknownTool(call.tool);
    if (auto hit = s.map->lookup(call)) return {*hit, true};

    const auto& tmpl = prompt("tool_simulator");
    for (int round = 0;; ++round) {
        const auto entries = s.map->snapshot();
        ChatRequest req;
        req.model_tag = config_.tool_model;
        req.temperature = config_.simulator_temperature;
        req.max_tokens = config_.simulator_max_tokens;
        req.messages.push_back({Role::System, tmpl.system, std::nullopt, 0});
        req.messages.push_back({Role::User,
                                render_template(tmpl.user, {{"instruction", s.task->instruction},
                                                            {"tool_spec", json(*spec).dump()},
                                                            {"call", call.tool + "(" + call.args.dump() + ")"},
                                                            {"mapping", render_mapping(entries)}}),
                                std::nullopt, 1});

        std::optional<SimulatorVerdict> verdict;
        for (int attempt = 0; attempt < config_.simulator_attempts && !verdict; ++attempt)
            verdict = parse_simulator_output(gateway_.complete(req).content, entries.size());
        if (!verdict) {
            spdlog::warn("session {}: tool simulator output unparseable for {}", s.id, call.tool);
            return {"Error: the tool " + call.tool + " failed to produce a response. Please try again.", false};
        }
        if (verdict->kind == SimulatorVerdict::Kind::Match) return {entries[verdict->index].response, true};

        // Optimistic append: if another session extended the map meanwhile,
        // re-run against the newer snapshot; the final round appends anyway.
        const bool last_round = round + 1 >= config_.optimistic_retries;
        auto commit = s.map->commit(call, verdict->body,
                                    last_round ? std::nullopt : std::optional<std::size_t>(entries.size()));
        switch (commit.outcome) {
        case ConsistencyMap::Outcome::Appended: return {commit.response, false};
        case ConsistencyMap::Outcome::Existing: return {commit.response, true};
        case ConsistencyMap::Outcome::Stale: continue;
        }
    }
}

std::string Environment::simulate_user(Session& s, std::string_view question) {
    const auto& tmpl = prompt("user_simulator");
    std::vector<Message> dialogue(s.transcript.begin() + 1, s.transcript.end() - 1);
    ChatRequest req;
    req.model_tag = config_.user_model;
    req.temperature = config_.simulator_temperature;
    req.max_tokens = config_.simulator_max_tokens;
    req.messages.push_back({Role::System, tmpl.system, std::nullopt, 0});
    req.messages.push_back({Role::User,
                            render_template(tmpl.user, {{"hidden_context", s.task->hidden_context},
                                                        {"instruction", s.task->instruction},
                                                        {"dialogue", render_transcript(dialogue)},
                                                        {"question", std::string(question)}}),
                            std::nullopt, 1});

    const auto hidden = normalize_text(s.task->hidden_context);
    for (int attempt = 0; attempt < config_.simulator_attempts; ++attempt) {
        auto text = std::string(trim(gateway_.complete(req).content));
        if (text.empty()) continue;
        // Dumping the whole background in one reply defeats the information gap.
        if (!hidden.empty() && normalize_text(text).find(hidden) != std::string::npos) {
            spdlog::warn("session {}: user simulator disclosed the full hidden context; re-asking", s.id);
            continue;
        }
        return text;
    }
    return std::string(kUserFallbackReply);
}

// ---------------------------------------------------------------------------
// Agents
// ---------------------------------------------------------------------------

AgentMessage ScriptedAgent::act(const Session&) {
    if (script_.empty()) return AgentMessage::text("<answer></answer>");
    const auto i = std::min(next_, script_.size() - 1);
    ++next_;
    return script_[i];
}

AgentMessage LlmAgent::act(const Session& session) {
    ChatRequest req;
    req.model_tag = model_;
    req.temperature = temperature_;
    req.max_tokens = max_tokens_;
    req.messages = session.transcript;
    req.tools = session.task->toolset;
    return AgentMessage::from_chat_response(gateway_.complete(req));
}

Trajectory run_episode(Environment& env, Session& session, AgentPolicy& agent, std::string trajectory_id) {
    while (session.active()) {
        AgentMessage message;
        try {
            message = agent.act(session);
        } catch (const GatewayError& e) {
            spdlog::error("session {}: agent failed: {}", session.id, e.what());
            session.status = SessionStatus::Error;
            break;
        }
        env.step(session, message);
    }
    return session.trajectory(std::move(trajectory_id));
}

std::vector<Trajectory> run_group(Environment& env, std::shared_ptr<const SynthTask> task,
                                  const std::string& group_id, int n, const AgentFactory& make_agent) {
    std::vector<Trajectory> out;
    for (int i = 0; i < n; ++i) {
        Session s = env.reset(task, MapScope::shared(group_id));
        auto agent = make_agent();
        out.push_back(run_episode(env, s, *agent, task->task_id + "/" + group_id + "/" + std::to_string(i)));
    }
    return out;
}

}  // namespace agentforge

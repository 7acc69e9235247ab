#include "agentforge/serialize.hpp"

#include <fstream>
#include <random>
#include <system_error>

namespace agentforge {

namespace {

template <typename T>
T field(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw std::runtime_error(std::string("missing field '") + key + "'");
    return it->get<T>();
}

template <typename T>
T field_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    return it->get<T>();
}

}  // namespace

void to_json(json& j, const PersonaRecord& v) { j = json{{"id", v.id}, {"description", v.description}}; }

void from_json(const json& j, PersonaRecord& v) {
    v.id = field_or<std::string>(j, "id", "");
    // Persona Hub records carry the text under "persona".
    if (j.contains("description")) v.description = field<std::string>(j, "description");
    else v.description = field<std::string>(j, "persona");
}

void to_json(json& j, const WorkflowStep& v) {
    j = json{{"index", v.index}, {"description", v.description}, {"expected_tools", v.expected_tools}};
}

void from_json(const json& j, WorkflowStep& v) {
    v.index = field<int>(j, "index");
    v.description = field<std::string>(j, "description");
    v.expected_tools = field_or<std::vector<std::string>>(j, "expected_tools", {});
}

void to_json(json& j, const ToolSpec& v) {
    json props = json::object();
    json required = json::array();
    for (const auto& p : v.parameters) {
        props[p.name] = json{{"type", std::string(to_string(p.type))}, {"description", p.description}};
        if (p.required) required.push_back(p.name);
    }
    j = json{{"name", v.name},
             {"description", v.description},
             {"parameters", json{{"type", "object"}, {"properties", props}, {"required", required}}}};
}

void from_json(const json& j, ToolSpec& v) { v = validate_tool_spec(j); }

void to_json(json& j, const ForbiddenConstraint& v) { j = json{{"description", v.description}}; }

void from_json(const json& j, ForbiddenConstraint& v) {
    if (j.is_string()) v.description = j.get<std::string>();
    else v.description = field<std::string>(j, "description");
}

void to_json(json& j, const CanonicalCall& v) { j = json{{"tool", v.tool}, {"args", v.args}}; }

void from_json(const json& j, CanonicalCall& v) {
    v.tool = field<std::string>(j, "tool");
    v.args = j.contains("args") ? j.at("args") : json::object();
}

void to_json(json& j, const Message& v) {
    j = json{{"role", std::string(to_string(v.role))}, {"content", v.content}};
    if (v.call) j["call"] = *v.call;
    j["turn"] = v.turn;
}

void from_json(const json& j, Message& v) {
    auto role = role_from_string(field<std::string>(j, "role"));
    if (!role) throw std::runtime_error("unknown role '" + j.at("role").get<std::string>() + "'");
    v.role = *role;
    v.content = field<std::string>(j, "content");
    v.call = j.contains("call") && !j.at("call").is_null() ? std::optional(j.at("call").get<CanonicalCall>())
                                                           : std::nullopt;
    v.turn = field<int>(j, "turn");
}

void to_json(json& j, const SynthTask& v) {
    j = json{{"task_id", v.task_id},         {"persona", v.persona},
             {"workflow", v.workflow},       {"toolset", v.toolset},
             {"forbidden", v.forbidden},     {"instruction", v.instruction},
             {"hidden_context", v.hidden_context}};
}

void from_json(const json& j, SynthTask& v) {
    v.task_id = field_or<std::string>(j, "task_id", "");
    v.persona = field<PersonaRecord>(j, "persona");
    v.workflow = field_or<std::vector<WorkflowStep>>(j, "workflow", {});
    v.toolset = field<std::vector<ToolSpec>>(j, "toolset");
    v.forbidden = field_or<std::vector<ForbiddenConstraint>>(j, "forbidden", {});
    v.instruction = field<std::string>(j, "instruction");
    v.hidden_context = field_or<std::string>(j, "hidden_context", "");
}

void to_json(json& j, const Trajectory& v) {
    j = json{{"id", v.id}, {"task_id", v.task_id}, {"messages", v.messages}};
    j["final_answer"] = v.final_answer ? json(*v.final_answer) : json(nullptr);
    j["terminated_reason"] = std::string(to_string(v.terminated));
}

void from_json(const json& j, Trajectory& v) {
    v.id = field_or<std::string>(j, "id", "");
    v.task_id = field<std::string>(j, "task_id");
    v.messages = field<std::vector<Message>>(j, "messages");
    v.final_answer = j.contains("final_answer") && !j.at("final_answer").is_null()
                         ? std::optional(j.at("final_answer").get<std::string>())
                         : std::nullopt;
    auto reason = termination_from_string(field<std::string>(j, "terminated_reason"));
    if (!reason) throw std::runtime_error("unknown terminated_reason");
    v.terminated = *reason;
}

void to_json(json& j, const Rubric& v) {
    j = json{{"task_id", v.task_id},
             {"forbidden", v.forbidden},
             {"subgoals", v.subgoals},
             {"required_interactions", v.required_interactions}};
}

void from_json(const json& j, Rubric& v) {
    v.task_id = field<std::string>(j, "task_id");
    v.forbidden = field_or<std::vector<ForbiddenConstraint>>(j, "forbidden", {});
    v.subgoals = field<std::vector<std::string>>(j, "subgoals");
    v.required_interactions = field_or<std::vector<std::string>>(j, "required_interactions", {});
}

void to_json(json& j, const Fraction& v) { j = json{{"satisfied", v.satisfied}, {"total", v.total}}; }

void from_json(const json& j, Fraction& v) {
    v.satisfied = field<std::int64_t>(j, "satisfied");
    v.total = field<std::int64_t>(j, "total");
    if (v.satisfied < 0 || v.total < 0 || v.satisfied > v.total) throw std::runtime_error("invalid fraction");
}

void to_json(json& j, const RewardReport& v) {
    j = json{{"gate", v.gate},
             {"subgoal_fraction", v.subgoals},
             {"interaction_fraction", v.interactions},
             {"reward", v.reward},
             {"reward_exact", v.reward_exact.str()}};
}

void from_json(const json& j, RewardReport& v) {
    // Derived fields are recomputed so a report cannot disagree with itself.
    v = make_reward_report(field<int>(j, "gate"), field<Fraction>(j, "subgoal_fraction"),
                           field<Fraction>(j, "interaction_fraction"));
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    thread_local std::mt19937_64 rng{std::random_device{}()};
    auto tmp = path;
    tmp += ".tmp" + std::to_string(rng() % 1000000);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out.flush()) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace agentforge

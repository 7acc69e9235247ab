#include "agentforge/schema.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_set>

#include "agentforge/serialize.hpp"
#include "agentforge/text.hpp"

namespace agentforge {

ValidationError::ValidationError(Rule rule, std::string path, const std::string& detail)
    : std::runtime_error(std::string(to_string(rule)) + " at '" + path + "': " + detail),
      rule_(rule),
      path_(std::move(path)),
      detail_(detail) {}

std::string_view to_string(ValidationError::Rule rule) noexcept {
    switch (rule) {
    case ValidationError::Rule::MissingField: return "MissingField";
    case ValidationError::Rule::BadIdentifier: return "BadIdentifier";
    case ValidationError::Rule::DuplicateParameter: return "DuplicateParameter";
    case ValidationError::Rule::UnknownSemanticType: return "UnknownSemanticType";
    case ValidationError::Rule::DuplicateTool: return "DuplicateTool";
    case ValidationError::Rule::InvalidValue: return "InvalidValue";
    }
    return "InvalidValue";
}

ParseError::ParseError(std::size_t line, const std::string& detail)
    : std::runtime_error("line " + std::to_string(line) + ": " + detail), line_(line) {}

std::string_view to_string(SemanticType type) noexcept {
    switch (type) {
    case SemanticType::String: return "string";
    case SemanticType::Number: return "number";
    case SemanticType::Integer: return "integer";
    case SemanticType::Boolean: return "boolean";
    case SemanticType::Array: return "array";
    case SemanticType::Object: return "object";
    }
    return "string";
}

std::optional<SemanticType> semantic_type_from_string(std::string_view name) noexcept {
    if (name == "string") return SemanticType::String;
    if (name == "number") return SemanticType::Number;
    if (name == "integer") return SemanticType::Integer;
    if (name == "boolean") return SemanticType::Boolean;
    if (name == "array") return SemanticType::Array;
    if (name == "object") return SemanticType::Object;
    return std::nullopt;
}

std::string_view to_string(Role role) noexcept {
    switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::ToolCall: return "tool_call";
    case Role::ToolResponse: return "tool_response";
    }
    return "user";
}

std::optional<Role> role_from_string(std::string_view name) noexcept {
    if (name == "system") return Role::System;
    if (name == "user") return Role::User;
    if (name == "assistant") return Role::Assistant;
    if (name == "tool_call") return Role::ToolCall;
    if (name == "tool_response") return Role::ToolResponse;
    return std::nullopt;
}

std::string_view to_string(TerminationReason reason) noexcept {
    switch (reason) {
    case TerminationReason::Answered: return "answered";
    case TerminationReason::TurnLimit: return "turn_limit";
    case TerminationReason::Error: return "error";
    }
    return "error";
}

std::optional<TerminationReason> termination_from_string(std::string_view name) noexcept {
    if (name == "answered") return TerminationReason::Answered;
    if (name == "turn_limit") return TerminationReason::TurnLimit;
    if (name == "error") return TerminationReason::Error;
    return std::nullopt;
}

const ParameterSpec* ToolSpec::find_parameter(std::string_view param) const {
    for (const auto& p : parameters)
        if (p.name == param) return &p;
    return nullptr;
}

std::size_t ToolSpec::required_count() const {
    return static_cast<std::size_t>(
        std::count_if(parameters.begin(), parameters.end(), [](const auto& p) { return p.required; }));
}

const ToolSpec* SynthTask::find_tool(std::string_view name) const {
    for (const auto& t : toolset)
        if (t.name == name) return &t;
    return nullptr;
}

std::string CanonicalCall::key() const { return tool + "(" + args.dump() + ")"; }

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

double Fraction::value() const noexcept {
    if (total == 0) return 1.0;
    return static_cast<double>(satisfied) / static_cast<double>(total);
}

Rational Rational::make(std::int64_t num, std::int64_t den) {
    if (den == 0) throw std::invalid_argument("rational with zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    const auto g = std::gcd(num < 0 ? -num : num, den);
    return g == 0 ? Rational{0, 1} : Rational{num / g, den / g};
}

Rational Rational::of(const Fraction& f) {
    if (f.total == 0) return {1, 1};
    return make(f.satisfied, f.total);
}

Rational Rational::operator+(const Rational& o) const {
    return make(num * o.den + o.num * den, den * o.den);
}

Rational Rational::operator*(const Rational& o) const { return make(num * o.num, den * o.den); }

std::string Rational::str() const { return std::to_string(num) + "/" + std::to_string(den); }

RewardReport make_reward_report(int gate, Fraction subgoals, Fraction interactions) {
    RewardReport r;
    r.gate = gate != 0 ? 1 : 0;
    r.subgoals = subgoals;
    r.interactions = interactions;
    r.reward_exact = Rational{r.gate, 1} * (Rational::of(subgoals) + Rational::of(interactions)) *
                     Rational{1, 2};
    r.reward = r.reward_exact.value();
    return r;
}

// ---------------------------------------------------------------------------
// Tool spec validation
// ---------------------------------------------------------------------------

bool is_identifier(std::string_view name) noexcept {
    if (name.empty()) return false;
    auto head = static_cast<unsigned char>(name[0]);
    if (!(std::isalpha(head) || head == '_')) return false;
    return std::all_of(name.begin() + 1, name.end(), [](char c) {
        auto u = static_cast<unsigned char>(c);
        return std::isalnum(u) || u == '_';
    });
}

namespace {

using Rule = ValidationError::Rule;

const json& require(const json& obj, const std::string& key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(Rule::MissingField, path + key, "field is required");
    return *it;
}

std::string optional_string(const json& obj, const std::string& key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return {};
    if (!it->is_string()) throw ValidationError(Rule::InvalidValue, path + key, "expected a string");
    return it->get<std::string>();
}

}  // namespace

ToolSpec validate_tool_spec(const json& raw) {
    if (!raw.is_object()) throw ValidationError(Rule::InvalidValue, "", "tool spec must be an object");

    const json* body = &raw;
    std::string prefix;
    if (auto fn = raw.find("function"); fn != raw.end()) {
        if (auto type = raw.find("type"); type != raw.end() && *type != "function")
            throw ValidationError(Rule::InvalidValue, "type", "wrapped tool spec must have type 'function'");
        if (!fn->is_object()) throw ValidationError(Rule::InvalidValue, "function", "expected an object");
        body = &*fn;
        prefix = "function.";
    }

    ToolSpec spec;
    const json& name = require(*body, "name", prefix);
    if (!name.is_string() || !is_identifier(name.get<std::string>()))
        throw ValidationError(Rule::BadIdentifier, prefix + "name",
                              "tool name must match [A-Za-z_][A-Za-z0-9_]*");
    spec.name = name.get<std::string>();
    spec.description = optional_string(*body, "description", prefix);

    auto params_it = body->find("parameters");
    if (params_it == body->end() || params_it->is_null()) return spec;

    const std::string ppath = prefix + "parameters.";
    const json& params = *params_it;
    if (!params.is_object())
        throw ValidationError(Rule::InvalidValue, prefix + "parameters", "expected an object");
    if (auto type = params.find("type"); type != params.end() && *type != "object")
        throw ValidationError(Rule::InvalidValue, ppath + "type", "parameters must have type 'object'");

    if (auto props = params.find("properties"); props != params.end()) {
        if (!props->is_object())
            throw ValidationError(Rule::InvalidValue, ppath + "properties", "expected an object");
        for (const auto& [pname, pbody] : props->items()) {
            const std::string path = ppath + "properties." + pname;
            if (!is_identifier(pname))
                throw ValidationError(Rule::BadIdentifier, path, "parameter name is not an identifier");
            if (!pbody.is_object()) throw ValidationError(Rule::InvalidValue, path, "expected an object");
            const json& type = require(pbody, "type", path + ".");
            if (!type.is_string())
                throw ValidationError(Rule::UnknownSemanticType, path + ".type", "type must be a string");
            auto sem = semantic_type_from_string(type.get<std::string>());
            if (!sem)
                throw ValidationError(Rule::UnknownSemanticType, path + ".type",
                                      "unknown type '" + type.get<std::string>() + "'");
            ParameterSpec p;
            p.name = pname;
            p.type = *sem;
            p.description = optional_string(pbody, "description", path + ".");
            p.required = false;
            spec.parameters.push_back(std::move(p));
        }
    }

    if (auto req = params.find("required"); req != params.end()) {
        if (!req->is_array())
            throw ValidationError(Rule::InvalidValue, ppath + "required", "expected an array");
        std::set<std::string> seen;
        for (std::size_t i = 0; i < req->size(); ++i) {
            const std::string path = ppath + "required[" + std::to_string(i) + "]";
            const json& entry = (*req)[i];
            if (!entry.is_string()) throw ValidationError(Rule::InvalidValue, path, "expected a string");
            const auto rname = entry.get<std::string>();
            if (!seen.insert(rname).second)
                throw ValidationError(Rule::DuplicateParameter, path, "'" + rname + "' listed twice");
            auto it = std::find_if(spec.parameters.begin(), spec.parameters.end(),
                                   [&](const auto& p) { return p.name == rname; });
            if (it == spec.parameters.end())
                throw ValidationError(Rule::MissingField, path,
                                      "required parameter '" + rname + "' is not declared in properties");
            it->required = true;
        }
    }
    return spec;
}

ToolSpec validate_tool_spec_text(std::string_view text) { return validate_tool_spec(parse_json_strict(text)); }

std::vector<ToolSpec> validate_toolset(const json& raw_list) {
    if (!raw_list.is_array()) throw ValidationError(Rule::InvalidValue, "", "toolset must be an array");
    std::vector<ToolSpec> out;
    std::unordered_set<std::string> names;
    for (std::size_t i = 0; i < raw_list.size(); ++i) {
        const std::string path = "[" + std::to_string(i) + "]";
        ToolSpec spec;
        try {
            spec = validate_tool_spec(raw_list[i]);
        } catch (const ValidationError& e) {
            throw ValidationError(e.rule(), path + (e.path().empty() ? "" : "." + e.path()), e.detail());
        }
        if (!names.insert(spec.name).second)
            throw ValidationError(Rule::DuplicateTool, path + ".name", "duplicate tool '" + spec.name + "'");
        out.push_back(std::move(spec));
    }
    return out;
}

void validate_task(const SynthTask& task) {
    if (task.toolset.empty()) throw ValidationError(Rule::MissingField, "toolset", "toolset is empty");
    if (trim(task.instruction).empty())
        throw ValidationError(Rule::MissingField, "instruction", "instruction is empty");
    if (trim(task.persona.description).empty())
        throw ValidationError(Rule::MissingField, "persona.description", "persona description is empty");
    std::unordered_set<std::string> names;
    for (std::size_t i = 0; i < task.toolset.size(); ++i) {
        const auto& tool = task.toolset[i];
        const std::string path = "toolset[" + std::to_string(i) + "]";
        // Re-validate through the wire layout so in-memory tasks obey the same rules.
        validate_tool_spec(json(tool));
        if (!names.insert(tool.name).second)
            throw ValidationError(Rule::DuplicateTool, path + ".name", "duplicate tool '" + tool.name + "'");
        std::unordered_set<std::string> pnames;
        for (const auto& p : tool.parameters)
            if (!pnames.insert(p.name).second)
                throw ValidationError(Rule::DuplicateParameter, path + ".parameters." + p.name,
                                      "duplicate parameter");
    }
    for (std::size_t i = 0; i < task.workflow.size(); ++i)
        if (task.workflow[i].index != static_cast<int>(i) + 1)
            throw ValidationError(Rule::InvalidValue, "workflow[" + std::to_string(i) + "].index",
                                  "workflow indices must be contiguous from 1");
    for (std::size_t i = 0; i < task.forbidden.size(); ++i)
        if (trim(task.forbidden[i].description).empty())
            throw ValidationError(Rule::MissingField, "forbidden[" + std::to_string(i) + "]",
                                  "empty forbidden constraint");
}

void validate_transcript(const std::vector<Message>& messages) {
    for (std::size_t i = 0; i < messages.size(); ++i) {
        const auto& m = messages[i];
        const std::string path = "messages[" + std::to_string(i) + "]";
        if (i > 0 && m.turn <= messages[i - 1].turn)
            throw ValidationError(Rule::InvalidValue, path + ".turn", "turn indices must strictly increase");
        if ((m.role == Role::ToolCall) != m.call.has_value())
            throw ValidationError(Rule::InvalidValue, path + ".call", "call present iff role is tool_call");
        if (m.role == Role::ToolResponse && (i == 0 || messages[i - 1].role != Role::ToolCall))
            throw ValidationError(Rule::InvalidValue, path, "tool_response must follow a tool_call");
    }
}

std::string render_transcript(const std::vector<Message>& messages, bool include_system) {
    std::string out;
    for (const auto& m : messages) {
        if (m.role == Role::System && !include_system) continue;
        out += "[" + std::to_string(m.turn) + "] ";
        switch (m.role) {
        case Role::System: out += "System: " + m.content; break;
        case Role::User: out += "User: " + m.content; break;
        case Role::Assistant: out += "Assistant: " + m.content; break;
        case Role::ToolCall: out += "Assistant (Tool Call): " + m.call->tool + "(" + m.call->args.dump() + ")"; break;
        case Role::ToolResponse: out += "Tool (Response): " + m.content; break;
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

json canonicalize_value(const json& value) {
    switch (value.type()) {
    case json::value_t::object: {
        std::vector<std::string> keys;
        for (const auto& [k, _] : value.items()) keys.push_back(k);
        std::sort(keys.begin(), keys.end());
        json out = json::object();
        for (const auto& k : keys) out[k] = canonicalize_value(value.at(k));
        return out;
    }
    case json::value_t::array: {
        json out = json::array();
        for (const auto& v : value) out.push_back(canonicalize_value(v));
        return out;
    }
    case json::value_t::string: return json(std::string(trim(value.get_ref<const std::string&>())));
    case json::value_t::number_unsigned: {
        auto u = value.get<std::uint64_t>();
        if (u <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            return json(static_cast<std::int64_t>(u));
        return value;
    }
    case json::value_t::number_float: {
        double d = value.get<double>();
        if (!std::isfinite(d)) return json(nullptr);
        if (d == 0.0) return json(std::int64_t{0});
        // 2^53: every integral double below is exactly representable as int64.
        if (std::trunc(d) == d && std::fabs(d) < 9007199254740992.0)
            return json(static_cast<std::int64_t>(d));
        return json(d);
    }
    default: return value;
    }
}

CanonicalCall canonicalize_call(std::string_view tool, const json& args) {
    CanonicalCall call;
    call.tool = std::string(trim(tool));
    call.args = args.is_null() ? json::object() : canonicalize_value(args);
    return call;
}

CanonicalCall canonicalize_call(std::string_view tool, const json& args, const std::vector<ToolSpec>& toolset) {
    auto trimmed = trim(tool);
    if (std::none_of(toolset.begin(), toolset.end(), [&](const auto& t) { return t.name == trimmed; }))
        throw UnknownTool(std::string(trimmed));
    return canonicalize_call(tool, args);
}

std::uint64_t fnv1a64(std::string_view data) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex16(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::string compute_task_id(const SynthTask& task) {
    json content = json::object();
    content["persona"] = task.persona;
    content["workflow"] = task.workflow;
    content["toolset"] = task.toolset;
    return hex16(fnv1a64(content.dump()));
}

// ---------------------------------------------------------------------------
// Strict JSON parsing
// ---------------------------------------------------------------------------

json parse_json_strict(std::string_view text) {
    struct Frame {
        bool is_object = false;
        std::set<std::string> keys;
        std::string current;
        std::size_t index = 0;
    };
    std::vector<Frame> stack;
    std::optional<ValidationError> duplicate;

    auto path_of = [&](const std::string& last) {
        std::string path;
        for (std::size_t i = 0; i < stack.size(); ++i) {
            const auto& f = stack[i];
            const bool innermost = i + 1 == stack.size();
            if (f.is_object) {
                if (!path.empty()) path += '.';
                path += innermost ? last : f.current;
            } else if (!innermost) {
                path += "[" + std::to_string(f.index) + "]";
            }
        }
        return path;
    };

    auto advance_parent = [&] {
        if (!stack.empty() && !stack.back().is_object) ++stack.back().index;
    };

    json::parser_callback_t cb = [&](int, json::parse_event_t event, json& parsed) {
        using E = json::parse_event_t;
        switch (event) {
        case E::object_start: stack.push_back(Frame{true, {}, {}, 0}); break;
        case E::array_start: stack.push_back(Frame{false, {}, {}, 0}); break;
        case E::object_end:
        case E::array_end:
            stack.pop_back();
            advance_parent();
            break;
        case E::key: {
            auto key = parsed.get<std::string>();
            auto& top = stack.back();
            if (!top.keys.insert(key).second && !duplicate) {
                auto path = path_of(key);
                const bool is_param = path.find("parameters.properties.") != std::string::npos;
                duplicate.emplace(is_param ? Rule::DuplicateParameter : Rule::InvalidValue, path,
                                  "duplicate key '" + key + "'");
            }
            top.current = key;
            break;
        }
        case E::value: advance_parent(); break;
        }
        return true;
    };

    json out = json::parse(text.begin(), text.end(), cb);
    if (duplicate) throw *duplicate;
    return out;
}

}  // namespace agentforge

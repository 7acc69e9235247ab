#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace agentforge {

// Insertion order matters for tool parameters and prompt readability.
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class ValidationError : public std::runtime_error {
public:
    enum class Rule {
        MissingField,
        BadIdentifier,
        DuplicateParameter,
        UnknownSemanticType,
        DuplicateTool,
        InvalidValue,
    };

    ValidationError(Rule rule, std::string path, const std::string& detail);

    Rule rule() const noexcept { return rule_; }
    const std::string& path() const noexcept { return path_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    Rule rule_;
    std::string path_;
    std::string detail_;
};

std::string_view to_string(ValidationError::Rule rule) noexcept;

/// Malformed line in a line-delimited record file. `line` is 1-based.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& detail);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class UnknownTool : public std::runtime_error {
public:
    explicit UnknownTool(const std::string& name)
        : std::runtime_error("unknown tool '" + name + "'"), name_(name) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct PersonaRecord {
    std::string id;
    std::string description;

    bool operator==(const PersonaRecord&) const = default;
};

struct WorkflowStep {
    int index = 1;
    std::string description;
    std::vector<std::string> expected_tools;

    bool operator==(const WorkflowStep&) const = default;
};

enum class SemanticType { String, Number, Integer, Boolean, Array, Object };

std::string_view to_string(SemanticType type) noexcept;
std::optional<SemanticType> semantic_type_from_string(std::string_view name) noexcept;

struct ParameterSpec {
    std::string name;
    SemanticType type = SemanticType::String;
    std::string description;
    bool required = true;

    bool operator==(const ParameterSpec&) const = default;
};

struct ToolSpec {
    std::string name;
    std::string description;
    std::vector<ParameterSpec> parameters;

    const ParameterSpec* find_parameter(std::string_view param) const;
    std::size_t required_count() const;

    bool operator==(const ToolSpec&) const = default;
};

struct ForbiddenConstraint {
    std::string description;

    bool operator==(const ForbiddenConstraint&) const = default;
};

/// A tool invocation in normal form: keys sorted, strings trimmed, numbers
/// in shortest round-trip form with integral values stored as integers.
struct CanonicalCall {
    std::string tool;
    json args = json::object();

    /// Equality key for lookup tables; equal keys iff equal calls.
    std::string key() const;

    bool operator==(const CanonicalCall& other) const { return key() == other.key(); }
};

enum class Role { System, User, Assistant, ToolCall, ToolResponse };

std::string_view to_string(Role role) noexcept;
std::optional<Role> role_from_string(std::string_view name) noexcept;

struct Message {
    Role role = Role::User;
    std::string content;
    std::optional<CanonicalCall> call;  // present iff role == ToolCall
    int turn = 0;

    bool operator==(const Message&) const = default;
};

struct SynthTask {
    std::string task_id;
    PersonaRecord persona;
    std::vector<WorkflowStep> workflow;
    std::vector<ToolSpec> toolset;
    std::vector<ForbiddenConstraint> forbidden;
    std::string instruction;     // agent-visible
    std::string hidden_context;  // user simulator only

    const ToolSpec* find_tool(std::string_view name) const;

    bool operator==(const SynthTask&) const = default;
};

enum class TerminationReason { Answered, TurnLimit, Error };

std::string_view to_string(TerminationReason reason) noexcept;
std::optional<TerminationReason> termination_from_string(std::string_view name) noexcept;

struct Trajectory {
    std::string id;
    std::string task_id;
    std::vector<Message> messages;
    std::optional<std::string> final_answer;
    TerminationReason terminated = TerminationReason::Answered;

    bool operator==(const Trajectory&) const = default;
};

struct Rubric {
    std::string task_id;
    std::vector<ForbiddenConstraint> forbidden;
    std::vector<std::string> subgoals;
    std::vector<std::string> required_interactions;

    bool operator==(const Rubric&) const = default;
};

/// Count of satisfied rubric items out of a total. An empty item list is
/// vacuously satisfied.
struct Fraction {
    std::int64_t satisfied = 0;
    std::int64_t total = 0;

    double value() const noexcept;
    bool operator==(const Fraction&) const = default;
};

/// Reduced non-negative rational.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    static Rational make(std::int64_t num, std::int64_t den);
    static Rational of(const Fraction& f);
    Rational operator+(const Rational& o) const;
    Rational operator*(const Rational& o) const;
    double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
    std::string str() const;

    bool operator==(const Rational&) const = default;
};

struct RewardReport {
    int gate = 1;
    Fraction subgoals;
    Fraction interactions;
    Rational reward_exact;
    double reward = 0.0;

    bool operator==(const RewardReport&) const = default;
};

/// gate * (subgoal fraction + interaction fraction) / 2, computed exactly.
RewardReport make_reward_report(int gate, Fraction subgoals, Fraction interactions);

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

bool is_identifier(std::string_view name) noexcept;

/// Validates a function-calling tool description. Accepts the bare
/// `{name, description, parameters}` layout and the wrapped
/// `{"type": "function", "function": {...}}` layout.
ToolSpec validate_tool_spec(const json& raw);

/// As above, but from text; duplicate keys under `parameters.properties`
/// are reported as DuplicateParameter instead of being silently merged.
ToolSpec validate_tool_spec_text(std::string_view text);

/// Validates a whole toolset: every spec plus unique names.
std::vector<ToolSpec> validate_toolset(const json& raw_list);

/// Structural checks on a task (non-empty toolset and instruction, valid
/// tools, contiguous workflow indices). Throws ValidationError.
void validate_task(const SynthTask& task);

/// Message ordering rules: strictly increasing turns, tool responses only
/// directly after a tool call, call present iff role is tool_call.
void validate_transcript(const std::vector<Message>& messages);

/// Plain-text rendering used in simulator and judge prompts.
std::string render_transcript(const std::vector<Message>& messages, bool include_system = false);

// ---------------------------------------------------------------------------
// Canonicalization and identity
// ---------------------------------------------------------------------------

json canonicalize_value(const json& value);

/// Throws UnknownTool when `tool` is not in `toolset`.
CanonicalCall canonicalize_call(std::string_view tool, const json& args,
                                const std::vector<ToolSpec>& toolset);

/// Same normal form without a toolset membership check.
CanonicalCall canonicalize_call(std::string_view tool, const json& args);

std::uint64_t fnv1a64(std::string_view data) noexcept;
std::string hex16(std::uint64_t value);

/// Content hash of (persona, workflow, toolset), 16 hex chars.
std::string compute_task_id(const SynthTask& task);

/// Parses JSON, rejecting duplicate object keys. The thrown
/// ValidationError carries the JSON path of the duplicate.
json parse_json_strict(std::string_view text);

}  // namespace agentforge

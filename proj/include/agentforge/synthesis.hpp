#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "agentforge/gateway.hpp"
#include "agentforge/schema.hpp"
#include "agentforge/serialize.hpp"

namespace agentforge {

struct SynthesisConfig {
    std::string model = ModelRoles{}.synthesizer;
    std::string solver_model = ModelRoles{}.synthesizer;
    double temperature = 0.7;
    double check_temperature = 0.0;
    int attempts = 3;
    int max_tokens = 4096;
    int min_steps = 2;
    int max_steps = 12;
    int target_tools = 4;
    int consistency_samples = 3;

    static SynthesisConfig from_config(const Config& cfg);
};

/// A stage gave up after its bounded re-prompts.
class StageFailure : public std::runtime_error {
public:
    StageFailure(std::string stage, std::string reason, const std::string& detail)
        : std::runtime_error(reason + " in stage '" + stage + "': " + detail),
          stage_(std::move(stage)),
          reason_(std::move(reason)) {}

    const std::string& stage() const noexcept { return stage_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::string stage_;
    std::string reason_;
};

struct RejectionRecord {
    std::string persona_id;
    std::string stage;   // workflow | toolset | fuzzify
    std::string reason;  // UnparseableWorkflow | InvalidToolSpec | DegenerateRewrite | GatewayError
    std::string detail;

    bool operator==(const RejectionRecord&) const = default;
};

void to_json(json& j, const RejectionRecord& v);
void from_json(const json& j, RejectionRecord& v);

struct SynthesisOutcome {
    std::variant<SynthTask, RejectionRecord> result;
    std::int64_t tokens_spent = 0;

    bool accepted() const noexcept { return std::holds_alternative<SynthTask>(result); }
    const SynthTask& task() const { return std::get<SynthTask>(result); }
    const RejectionRecord& rejection() const { return std::get<RejectionRecord>(result); }

    bool operator==(const SynthesisOutcome&) const = default;
};

struct ToolsetDraft {
    std::vector<ToolSpec> tools;
    std::vector<ForbiddenConstraint> forbidden;
};

struct FuzzyTask {
    std::string instruction;
    std::string hidden_context;
};

struct ReasoningTask {
    std::string problem;
    std::string answer;
    std::string scenario_variant;

    bool operator==(const ReasoningTask&) const = default;
};

void to_json(json& j, const ReasoningTask& v);
void from_json(const json& j, ReasoningTask& v);

struct ConsistencyDecision {
    bool keep = false;
    std::vector<std::optional<std::string>> answers;  // nullopt = solver failure
    std::optional<std::string> consensus;
};

/// Pure decision rule: keep iff every answer is present and all canonical
/// forms agree.
ConsistencyDecision decide_consistency(std::vector<std::optional<std::string>> answers);

struct PersonaLoad {
    std::vector<PersonaRecord> records;
    std::vector<LineError> errors;
};

/// One JSON record per line (`{"id", "description"}` or Persona Hub's
/// `{"persona"}`); missing ids become `p<line>`. Strict mode throws on the
/// first malformed line; lenient mode reports it and keeps going.
PersonaLoad load_personas(std::istream& in, bool lenient = false);

// Parsers for the stage outputs. They throw ValidationError / StageFailure.
std::vector<WorkflowStep> parse_workflow(std::string_view text, int min_steps, int max_steps);
ToolsetDraft parse_toolset(std::string_view text);
FuzzyTask parse_fuzzy(std::string_view text, const std::vector<WorkflowStep>& workflow);

/// True iff the hidden context has at least one sentence not already
/// contained in the instruction.
bool adds_decisive_detail(std::string_view instruction, std::string_view hidden_context);

/// True iff both texts contain the same multiset of numerals.
bool preserves_numerals(std::string_view original, std::string_view variant);

class Synthesizer {
public:
    Synthesizer(Gateway& gateway, SynthesisConfig config);

    std::vector<WorkflowStep> generate_workflow(const PersonaRecord& persona, std::int64_t& tokens);
    ToolsetDraft generate_toolset(const PersonaRecord& persona, const std::vector<WorkflowStep>& workflow,
                                  std::int64_t& tokens);
    FuzzyTask fuzzify(const PersonaRecord& persona, const std::vector<WorkflowStep>& workflow,
                      const std::vector<ToolSpec>& toolset, std::int64_t& tokens);

    /// Scenario rewrite of a reasoning problem; unchanged when the persona is empty.
    std::string rewrite_reasoning_task(const std::string& problem, const PersonaRecord& persona,
                                       std::int64_t& tokens);
    ConsistencyDecision self_consistency_filter(const ReasoningTask& task, int samples, std::int64_t& tokens);

    /// workflow -> toolset + forbidden constraints -> instruction/hidden context.
    SynthesisOutcome synth_pipeline(const PersonaRecord& persona);

    const SynthesisConfig& config() const noexcept { return config_; }

private:
    ChatResponse ask(const std::string& stage_prompt, const std::map<std::string, std::string>& vars,
                     double temperature, std::int64_t& tokens, const std::string& feedback = {});

    Gateway& gateway_;
    SynthesisConfig config_;
};

/// OpenMP-parallel over personas; outcome order follows input order.
std::vector<SynthesisOutcome> synthesize_batch(Synthesizer& synth, const std::vector<PersonaRecord>& personas,
                                               int jobs);

/// Serial reference for `synthesize_batch`.
std::vector<SynthesisOutcome> synthesize_batch_serial(Synthesizer& synth,
                                                      const std::vector<PersonaRecord>& personas);

std::string render_workflow(const std::vector<WorkflowStep>& workflow);

}  // namespace agentforge

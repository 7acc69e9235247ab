#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "agentforge/gateway.hpp"
#include "agentforge/mockenv.hpp"
#include "agentforge/schema.hpp"
#include "agentforge/verdicts.hpp"

namespace agentforge {

class UnparseableRubric : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CoverageReport {
    std::string task_id;
    std::vector<std::vector<bool>> executed;  // [trajectory][step]
    Fraction best;                            // max executed-step fraction
    double threshold = 0.5;
    bool keep = false;

    bool operator==(const CoverageReport&) const = default;
};

void to_json(json& j, const CoverageReport& v);
void from_json(const json& j, CoverageReport& v);

/// Pure keep/drop rule: keep iff the best trajectory executes at least
/// `threshold` of the `steps` workflow steps.
CoverageReport decide_coverage(std::string task_id, std::vector<std::vector<bool>> executed, std::size_t steps,
                               double threshold);

struct RubricConfig {
    std::string teacher_model = ModelRoles{}.teacher;
    std::string judge_model = ModelRoles{}.judge;
    double teacher_temperature = 0.7;
    double extract_temperature = 0.0;
    int demonstrations = 4;
    double coverage_threshold = 0.5;
    int attempts = 3;
    int max_tokens = 4096;

    static RubricConfig from_config(const Config& cfg);
};

/// Per-task result of the teach stage.
struct TeachOutcome {
    std::string task_id;
    std::vector<Trajectory> trajectories;
    CoverageReport coverage;
    std::optional<Rubric> rubric;             // set iff kept
    std::optional<std::string> drop_reason;   // LowCoverage | UnparseableRubric | GatewayError
    std::vector<JudgeCall> calls;
};

class RubricBuilder {
public:
    RubricBuilder(Gateway& gateway, Environment& env, RubricConfig config, AgentFactory teacher);

    /// k teacher sessions sharing one consistency map; failures are kept.
    std::vector<Trajectory> collect_teacher_trajectories(std::shared_ptr<const SynthTask> task, int k);

    /// One prompt over all demonstrations; forbidden constraints pass through.
    Rubric extract_rubric(const std::string& task_id, const std::vector<WorkflowStep>& workflow,
                          const std::vector<Trajectory>& trajectories,
                          const std::vector<ForbiddenConstraint>& forbidden, JudgeLog* log = nullptr);

    /// Executed flag per step; unparseable lines count as unexecuted.
    std::vector<bool> judge_coverage(const std::vector<WorkflowStep>& workflow, const Trajectory& trajectory,
                                     JudgeLog* log = nullptr);

    CoverageReport coverage_filter(const SynthTask& task, const std::vector<Trajectory>& trajectories,
                                   double threshold, JudgeLog* log = nullptr);

    /// Demonstrations, coverage filter, then rubric extraction for kept tasks.
    TeachOutcome teach(std::shared_ptr<const SynthTask> task);

    const RubricConfig& config() const noexcept { return config_; }

private:
    Gateway& gateway_;
    Environment& env_;
    RubricConfig config_;
    AgentFactory teacher_;
};

/// Parses `{"subgoals": [...], "required_interactions": [...]}`. Throws
/// UnparseableRubric when there is no JSON or no subgoal.
Rubric parse_rubric(std::string_view text, const std::string& task_id,
                    const std::vector<ForbiddenConstraint>& forbidden);

/// OpenMP-parallel over tasks; outcome order follows input order.
std::vector<TeachOutcome> teach_batch(RubricBuilder& builder, const std::vector<std::shared_ptr<const SynthTask>>& tasks,
                                      int jobs);

/// Serial reference for `teach_batch`.
std::vector<TeachOutcome> teach_batch_serial(RubricBuilder& builder,
                                             const std::vector<std::shared_ptr<const SynthTask>>& tasks);

}  // namespace agentforge

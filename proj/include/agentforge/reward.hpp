#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "agentforge/gateway.hpp"
#include "agentforge/schema.hpp"
#include "agentforge/verdicts.hpp"

namespace agentforge {

class UnknownRubric : public std::runtime_error {
public:
    explicit UnknownRubric(const std::string& task_id)
        : std::runtime_error("no rubric for task '" + task_id + "'"), task_id_(task_id) {}
    const std::string& task_id() const noexcept { return task_id_; }

private:
    std::string task_id_;
};

enum class ReasoningMode { Exact, Judge };

struct JudgeConfig {
    std::string model = ModelRoles{}.judge;
    double temperature = 0.0;
    int attempts = 3;
    int max_tokens = 1024;

    static JudgeConfig from_config(const Config& cfg);
};

/// Rubric-based trajectory scoring through an LLM judge.
class Judge {
public:
    Judge(Gateway& gateway, JudgeConfig config);

    /// 0 iff some forbidden constraint is judged VIOLATED. One call per
    /// constraint; unparseable output after retries counts as CLEAN.
    int judge_forbidden(const Trajectory& trajectory, const Rubric& rubric, JudgeLog* log = nullptr);

    /// One call for all subgoals; a missing or malformed line counts as unsatisfied.
    Fraction score_subgoals(const Trajectory& trajectory, const Rubric& rubric, JudgeLog* log = nullptr);
    Fraction score_interactions(const Trajectory& trajectory, const Rubric& rubric, JudgeLog* log = nullptr);

    RewardReport compute_reward(const Trajectory& trajectory, const Rubric& rubric, JudgeLog* log = nullptr);

    /// Exact: canonical string equality. Judge: EQUIVALENT/DIFFERENT verdict,
    /// unparseable output scores 0.
    int score_reasoning(const std::string& answer, const std::string& gold, ReasoningMode mode,
                        JudgeLog* log = nullptr);

    const JudgeConfig& config() const noexcept { return config_; }

private:
    Fraction score_items(const Trajectory& trajectory, const std::vector<std::string>& items,
                         const std::string& kind, JudgeLog* log);
    std::string call(const std::string& user_prompt, const std::string& template_name);

    Gateway& gateway_;
    JudgeConfig config_;
};

// ---------------------------------------------------------------------------
// Batch scoring with repeats
// ---------------------------------------------------------------------------

struct JudgeRecord {
    std::string trajectory_id;
    std::string task_id;
    int repeat = 0;
    RewardReport report;
    std::vector<JudgeCall> calls;

    bool operator==(const JudgeRecord&) const = default;
};

void to_json(json& j, const JudgeRecord& v);
void from_json(const json& j, JudgeRecord& v);

/// Spread of a task's mean reward across judge repeats.
struct VarianceReport {
    std::string task_id;
    int trajectories = 0;
    std::vector<double> repeat_means;  // mean reward over the task's trajectories, per repeat
    double mean = 0.0;
    double variance = 0.0;             // population variance of repeat_means

    bool operator==(const VarianceReport&) const = default;
};

void to_json(json& j, const VarianceReport& v);
void from_json(const json& j, VarianceReport& v);

/// rewards[r][t] = reward of trajectory t on repeat r.
VarianceReport compute_variance(std::string task_id, const std::vector<std::vector<double>>& rewards);

struct JudgeBatchResult {
    std::vector<JudgeRecord> records;        // trajectory-major, then repeat
    std::vector<VarianceReport> variance;    // one per task, in first-seen order
    std::vector<std::string> missing_rubrics;

    bool operator==(const JudgeBatchResult&) const = default;
};

/// Scores every trajectory `repeats` times. Trajectories whose task has no
/// rubric are skipped and listed in `missing_rubrics`.
JudgeBatchResult judge_batch(Judge& judge, const std::vector<Trajectory>& trajectories,
                             const std::map<std::string, Rubric>& rubrics, int repeats, int jobs);

/// Serial reference for `judge_batch`.
JudgeBatchResult judge_batch_serial(Judge& judge, const std::vector<Trajectory>& trajectories,
                                    const std::map<std::string, Rubric>& rubrics, int repeats);

}  // namespace agentforge

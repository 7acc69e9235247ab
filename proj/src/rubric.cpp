#include "agentforge/rubric.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "agentforge/parallel.hpp"
#include "agentforge/prompts.hpp"
#include "agentforge/serialize.hpp"
#include "agentforge/synthesis.hpp"
#include "agentforge/text.hpp"

namespace agentforge {

void to_json(json& j, const CoverageReport& v) {
    j = json{{"task_id", v.task_id},   {"executed", v.executed},   {"best", v.best},
             {"best_coverage", v.best.value()}, {"threshold", v.threshold}, {"keep", v.keep}};
}

void from_json(const json& j, CoverageReport& v) {
    v.task_id = j.at("task_id").get<std::string>();
    v.executed = j.at("executed").get<std::vector<std::vector<bool>>>();
    v.best = j.at("best").get<Fraction>();
    v.threshold = j.value("threshold", 0.5);
    v.keep = j.at("keep").get<bool>();
}

CoverageReport decide_coverage(std::string task_id, std::vector<std::vector<bool>> executed, std::size_t steps,
                               double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("coverage threshold must be in (0, 1]");
    CoverageReport r;
    r.task_id = std::move(task_id);
    r.threshold = threshold;
    r.best = {0, static_cast<std::int64_t>(steps)};
    for (const auto& row : executed) {
        auto done = static_cast<std::int64_t>(std::count(row.begin(), row.end(), true));
        r.best.satisfied = std::max(r.best.satisfied, std::min(done, r.best.total));
    }
    // Exact comparison with a tiny slack so 0.5 * 6 == 3 is never lost to rounding.
    r.keep = steps > 0 && !executed.empty() &&
             static_cast<double>(r.best.satisfied) >= threshold * static_cast<double>(steps) - 1e-9;
    r.executed = std::move(executed);
    return r;
}

RubricConfig RubricConfig::from_config(const Config& cfg) {
    RubricConfig c;
    auto roles = ModelRoles::from_config(cfg);
    c.teacher_model = roles.teacher;
    c.judge_model = roles.judge;
    c.teacher_temperature = cfg.get_double("teach.temperature", c.teacher_temperature);
    c.demonstrations = static_cast<int>(cfg.get_int("teach.demonstrations", c.demonstrations));
    c.coverage_threshold = cfg.get_double("teach.coverage_threshold", c.coverage_threshold);
    c.attempts = static_cast<int>(cfg.get_int("teach.attempts", c.attempts));
    if (c.demonstrations < 0) throw std::invalid_argument("teach.demonstrations must be non-negative");
    if (!(c.coverage_threshold > 0.0 && c.coverage_threshold <= 1.0))
        throw std::invalid_argument("teach.coverage_threshold must be in (0, 1]");
    return c;
}

Rubric parse_rubric(std::string_view text, const std::string& task_id,
                    const std::vector<ForbiddenConstraint>& forbidden) {
    auto block = extract_json_block(text);
    if (!block) throw UnparseableRubric("no JSON object in rubric output");
    json j;
    try {
        j = json::parse(*block);
    } catch (const json::exception& e) {
        throw UnparseableRubric(e.what());
    }
    if (!j.is_object()) throw UnparseableRubric("rubric output is not an object");

    auto strings = [&](const char* key) {
        std::vector<std::string> out;
        if (!j.contains(key)) return out;
        if (!j.at(key).is_array()) throw UnparseableRubric(std::string(key) + " is not a list");
        for (const auto& v : j.at(key)) {
            if (!v.is_string()) throw UnparseableRubric(std::string(key) + " entries must be strings");
            auto s = std::string(trim(v.get<std::string>()));
            if (!s.empty()) out.push_back(std::move(s));
        }
        return out;
    };

    Rubric r;
    r.task_id = task_id;
    r.forbidden = forbidden;
    r.subgoals = strings("subgoals");
    r.required_interactions = strings(j.contains("required_interactions") ? "required_interactions" : "interactions");
    if (r.subgoals.empty()) throw UnparseableRubric("rubric has no subgoals");
    return r;
}

RubricBuilder::RubricBuilder(Gateway& gateway, Environment& env, RubricConfig config, AgentFactory teacher)
    : gateway_(gateway), env_(env), config_(std::move(config)), teacher_(std::move(teacher)) {}

std::vector<Trajectory> RubricBuilder::collect_teacher_trajectories(std::shared_ptr<const SynthTask> task, int k) {
    if (k <= 0) return {};
    return run_group(env_, std::move(task), "teach", k, teacher_);
}

namespace {

std::string render_demonstrations(const std::vector<Trajectory>& trajectories) {
    std::string out;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        out += "--- Demonstration " + std::to_string(i + 1) + " (" +
               std::string(to_string(trajectories[i].terminated)) + ") ---\n";
        out += render_transcript(trajectories[i].messages);
    }
    return out;
}

std::string render_forbidden(const std::vector<ForbiddenConstraint>& forbidden) {
    std::vector<std::string> items;
    for (const auto& f : forbidden) items.push_back(f.description);
    return items.empty() ? "(none)\n" : number_items(items);
}

ChatRequest judge_request(const std::string& model, double temperature, int max_tokens, const PromptTemplate& tmpl,
                          std::string user) {
    ChatRequest req;
    req.model_tag = model;
    req.temperature = temperature;
    req.max_tokens = max_tokens;
    req.messages.push_back({Role::System, tmpl.system, std::nullopt, 0});
    req.messages.push_back({Role::User, std::move(user), std::nullopt, 1});
    return req;
}

}  // namespace

Rubric RubricBuilder::extract_rubric(const std::string& task_id, const std::vector<WorkflowStep>& workflow,
                                     const std::vector<Trajectory>& trajectories,
                                     const std::vector<ForbiddenConstraint>& forbidden, JudgeLog* log) {
    if (trajectories.empty()) throw std::invalid_argument("rubric extraction needs at least one trajectory");
    const auto& tmpl = prompt("rubric_extract");
    auto user = render_template(tmpl.user, {{"workflow", render_workflow(workflow)},
                                            {"forbidden", render_forbidden(forbidden)},
                                            {"trajectories", render_demonstrations(trajectories)}});
    auto req = judge_request(config_.teacher_model, config_.extract_temperature, config_.max_tokens, tmpl, user);
    std::string last_error = "no attempts";
    for (int attempt = 0; attempt < config_.attempts; ++attempt) {
        auto resp = gateway_.complete(req);
        if (log) log->add({"rubric", -1, attempt, user, resp.content});
        try {
            return parse_rubric(resp.content, task_id, forbidden);
        } catch (const UnparseableRubric& e) {
            last_error = e.what();
            spdlog::debug("task {}: rubric attempt {} unparseable: {}", task_id, attempt + 1, last_error);
        }
    }
    throw UnparseableRubric(last_error);
}

std::vector<bool> RubricBuilder::judge_coverage(const std::vector<WorkflowStep>& workflow,
                                                const Trajectory& trajectory, JudgeLog* log) {
    std::vector<std::string> steps;
    for (const auto& s : workflow) steps.push_back(s.description);
    const auto& tmpl = prompt("coverage_judge");
    auto user = render_template(tmpl.user,
                                {{"items", number_items(steps)}, {"transcript", render_transcript(trajectory.messages)}});
    auto req = judge_request(config_.judge_model, 0.0, 1024, tmpl, user);

    std::vector<std::optional<bool>> verdicts(steps.size());
    for (int attempt = 0; attempt < config_.attempts; ++attempt) {
        auto resp = gateway_.complete(req);
        if (log) log->add({"coverage", -1, attempt, user, resp.content});
        verdicts = parse_item_verdicts(resp.content, steps.size(), "EXECUTED", "UNEXECUTED");
        if (std::any_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.has_value(); })) break;
    }
    std::vector<bool> out;
    for (const auto& v : verdicts) out.push_back(v.value_or(false));
    return out;
}

CoverageReport RubricBuilder::coverage_filter(const SynthTask& task, const std::vector<Trajectory>& trajectories,
                                              double threshold, JudgeLog* log) {
    std::vector<std::vector<bool>> executed;
    for (const auto& t : trajectories) executed.push_back(judge_coverage(task.workflow, t, log));
    return decide_coverage(task.task_id, std::move(executed), task.workflow.size(), threshold);
}

TeachOutcome RubricBuilder::teach(std::shared_ptr<const SynthTask> task) {
    TeachOutcome out;
    out.task_id = task->task_id;
    JudgeLog log;
    try {
        out.trajectories = collect_teacher_trajectories(task, config_.demonstrations);
        out.coverage = coverage_filter(*task, out.trajectories, config_.coverage_threshold, &log);
        if (!out.coverage.keep) {
            out.drop_reason = "LowCoverage";
        } else {
            out.rubric = extract_rubric(task->task_id, task->workflow, out.trajectories, task->forbidden, &log);
        }
    } catch (const UnparseableRubric& e) {
        spdlog::warn("task {} dropped: unparseable rubric: {}", task->task_id, e.what());
        out.drop_reason = "UnparseableRubric";
    } catch (const GatewayError& e) {
        spdlog::warn("task {} dropped: {}", task->task_id, e.what());
        out.drop_reason = "GatewayError";
    }
    out.calls = log.take();
    return out;
}

std::vector<TeachOutcome> teach_batch(RubricBuilder& builder,
                                      const std::vector<std::shared_ptr<const SynthTask>>& tasks, int jobs) {
    std::vector<TeachOutcome> out(tasks.size());
    parallel_for(tasks.size(), jobs, [&](std::size_t i) { out[i] = builder.teach(tasks[i]); });
    return out;
}

std::vector<TeachOutcome> teach_batch_serial(RubricBuilder& builder,
                                             const std::vector<std::shared_ptr<const SynthTask>>& tasks) {
    std::vector<TeachOutcome> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) out.push_back(builder.teach(t));
    return out;
}

}  // namespace agentforge

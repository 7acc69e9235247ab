#include "agentforge/reward.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "agentforge/parallel.hpp"
#include "agentforge/prompts.hpp"
#include "agentforge/serialize.hpp"
#include "agentforge/text.hpp"

namespace agentforge {

JudgeConfig JudgeConfig::from_config(const Config& cfg) {
    JudgeConfig c;
    c.model = ModelRoles::from_config(cfg).judge;
    c.temperature = cfg.get_double("judge.temperature", c.temperature);
    c.attempts = static_cast<int>(cfg.get_int("judge.attempts", c.attempts));
    if (c.attempts < 1) throw std::invalid_argument("judge.attempts must be positive");
    return c;
}

Judge::Judge(Gateway& gateway, JudgeConfig config) : gateway_(gateway), config_(std::move(config)) {}

std::string Judge::call(const std::string& user_prompt, const std::string& template_name) {
    ChatRequest req;
    req.model_tag = config_.model;
    req.temperature = config_.temperature;
    req.max_tokens = config_.max_tokens;
    req.messages.push_back({Role::System, prompt(template_name).system, std::nullopt, 0});
    req.messages.push_back({Role::User, user_prompt, std::nullopt, 1});
    return gateway_.complete(req).content;
}

int Judge::judge_forbidden(const Trajectory& trajectory, const Rubric& rubric, JudgeLog* log) {
    const auto& tmpl = prompt("judge_forbidden");
    const auto transcript = render_transcript(trajectory.messages);
    for (std::size_t i = 0; i < rubric.forbidden.size(); ++i) {
        auto user = render_template(tmpl.user, {{"constraint", rubric.forbidden[i].description},
                                                {"transcript", transcript}});
        std::optional<bool> violated;
        for (int attempt = 0; attempt < config_.attempts && !violated; ++attempt) {
            auto response = call(user, "judge_forbidden");
            if (log) log->add({"forbidden", static_cast<int>(i), attempt, user, response});
            violated = parse_single_verdict(response, "VIOLATED", "CLEAN");
        }
        if (!violated) {
            spdlog::warn("trajectory {}: forbidden-behavior verdict unparseable for constraint {}; treating as clean",
                         trajectory.id, i + 1);
            continue;
        }
        if (*violated) return 0;
    }
    return 1;
}

Fraction Judge::score_items(const Trajectory& trajectory, const std::vector<std::string>& items,
                            const std::string& kind, JudgeLog* log) {
    Fraction f{0, static_cast<std::int64_t>(items.size())};
    if (items.empty()) return f;
    const auto name = "judge_" + kind;
    auto user = render_template(prompt(name).user, {{"items", number_items(items)},
                                                    {"transcript", render_transcript(trajectory.messages)}});
    std::vector<std::optional<bool>> verdicts(items.size());
    for (int attempt = 0; attempt < config_.attempts; ++attempt) {
        auto response = call(user, name);
        if (log) log->add({kind, -1, attempt, user, response});
        verdicts = parse_item_verdicts(response, items.size(), "SATISFIED", "UNSATISFIED");
        if (std::any_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.has_value(); })) break;
    }
    for (const auto& v : verdicts) f.satisfied += v.value_or(false) ? 1 : 0;
    return f;
}

Fraction Judge::score_subgoals(const Trajectory& trajectory, const Rubric& rubric, JudgeLog* log) {
    return score_items(trajectory, rubric.subgoals, "subgoals", log);
}

Fraction Judge::score_interactions(const Trajectory& trajectory, const Rubric& rubric, JudgeLog* log) {
    return score_items(trajectory, rubric.required_interactions, "interactions", log);
}

RewardReport Judge::compute_reward(const Trajectory& trajectory, const Rubric& rubric, JudgeLog* log) {
    if (trajectory.task_id != rubric.task_id)
        throw std::invalid_argument("rubric for task " + rubric.task_id + " used on trajectory of task " +
                                    trajectory.task_id);
    const int gate = judge_forbidden(trajectory, rubric, log);
    auto subgoals = score_subgoals(trajectory, rubric, log);
    auto interactions = score_interactions(trajectory, rubric, log);
    return make_reward_report(gate, subgoals, interactions);
}

int Judge::score_reasoning(const std::string& answer, const std::string& gold, ReasoningMode mode, JudgeLog* log) {
    if (trim(gold).empty()) throw std::invalid_argument("empty gold answer");
    if (mode == ReasoningMode::Exact) return canonicalize_answer(answer) == canonicalize_answer(gold) ? 1 : 0;

    auto user = render_template(prompt("judge_reasoning").user, {{"gold", gold}, {"answer", answer}});
    auto response = call(user, "judge_reasoning");
    if (log) log->add({"reasoning", -1, 0, user, response});
    return parse_single_verdict(response, "EQUIVALENT", "DIFFERENT").value_or(false) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Batch
// ---------------------------------------------------------------------------

void to_json(json& j, const JudgeRecord& v) {
    j = json{{"trajectory_id", v.trajectory_id}, {"task_id", v.task_id}, {"repeat", v.repeat},
             {"report", v.report}, {"calls", v.calls}};
}

void from_json(const json& j, JudgeRecord& v) {
    v.trajectory_id = j.at("trajectory_id").get<std::string>();
    v.task_id = j.at("task_id").get<std::string>();
    v.repeat = j.value("repeat", 0);
    v.report = j.at("report").get<RewardReport>();
    v.calls = j.value("calls", std::vector<JudgeCall>{});
}

void to_json(json& j, const VarianceReport& v) {
    j = json{{"task_id", v.task_id}, {"trajectories", v.trajectories}, {"repeat_means", v.repeat_means},
             {"mean", v.mean}, {"variance", v.variance}};
}

void from_json(const json& j, VarianceReport& v) {
    v.task_id = j.at("task_id").get<std::string>();
    v.trajectories = j.value("trajectories", 0);
    v.repeat_means = j.at("repeat_means").get<std::vector<double>>();
    v.mean = j.at("mean").get<double>();
    v.variance = j.at("variance").get<double>();
}

VarianceReport compute_variance(std::string task_id, const std::vector<std::vector<double>>& rewards) {
    VarianceReport v;
    v.task_id = std::move(task_id);
    v.trajectories = rewards.empty() ? 0 : static_cast<int>(rewards.front().size());
    for (const auto& row : rewards) {
        double sum = 0.0;
        for (double r : row) sum += r;
        v.repeat_means.push_back(row.empty() ? 0.0 : sum / static_cast<double>(row.size()));
    }
    if (v.repeat_means.empty()) return v;
    double sum = 0.0;
    for (double m : v.repeat_means) sum += m;
    v.mean = sum / static_cast<double>(v.repeat_means.size());
    double sq = 0.0;
    for (double m : v.repeat_means) sq += (m - v.mean) * (m - v.mean);
    v.variance = sq / static_cast<double>(v.repeat_means.size());
    return v;
}

namespace {

struct Job {
    const Trajectory* trajectory;
    const Rubric* rubric;
    int repeat;
};

struct Plan {
    std::vector<Job> jobs;
    std::vector<std::string> missing;
};

Plan plan_jobs(const std::vector<Trajectory>& trajectories, const std::map<std::string, Rubric>& rubrics,
               int repeats) {
    if (repeats < 1) throw std::invalid_argument("repeats must be positive");
    Plan p;
    for (const auto& t : trajectories) {
        auto it = rubrics.find(t.task_id);
        if (it == rubrics.end()) {
            if (std::find(p.missing.begin(), p.missing.end(), t.task_id) == p.missing.end())
                p.missing.push_back(t.task_id);
            continue;
        }
        for (int r = 0; r < repeats; ++r) p.jobs.push_back({&t, &it->second, r});
    }
    return p;
}

JudgeRecord run_job(Judge& judge, const Job& job) {
    JudgeLog log;
    JudgeRecord rec;
    rec.trajectory_id = job.trajectory->id;
    rec.task_id = job.trajectory->task_id;
    rec.repeat = job.repeat;
    rec.report = judge.compute_reward(*job.trajectory, *job.rubric, &log);
    rec.calls = log.take();
    return rec;
}

JudgeBatchResult assemble(std::vector<JudgeRecord> records, std::vector<std::string> missing, int repeats) {
    JudgeBatchResult out;
    out.missing_rubrics = std::move(missing);
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::vector<double>>> rewards;
    for (const auto& rec : records) {
        auto [it, fresh] = rewards.try_emplace(rec.task_id, std::vector<std::vector<double>>(repeats));
        if (fresh) order.push_back(rec.task_id);
        it->second[rec.repeat].push_back(rec.report.reward);
    }
    for (const auto& task : order) out.variance.push_back(compute_variance(task, rewards[task]));
    out.records = std::move(records);
    return out;
}

}  // namespace

JudgeBatchResult judge_batch(Judge& judge, const std::vector<Trajectory>& trajectories,
                             const std::map<std::string, Rubric>& rubrics, int repeats, int jobs) {
    auto plan = plan_jobs(trajectories, rubrics, repeats);
    std::vector<JudgeRecord> records(plan.jobs.size());
    parallel_for(plan.jobs.size(), jobs, [&](std::size_t i) { records[i] = run_job(judge, plan.jobs[i]); });
    return assemble(std::move(records), std::move(plan.missing), repeats);
}

JudgeBatchResult judge_batch_serial(Judge& judge, const std::vector<Trajectory>& trajectories,
                                    const std::map<std::string, Rubric>& rubrics, int repeats) {
    auto plan = plan_jobs(trajectories, rubrics, repeats);
    std::vector<JudgeRecord> records;
    records.reserve(plan.jobs.size());
    for (const auto& job : plan.jobs) records.push_back(run_job(judge, job));
    return assemble(std::move(records), std::move(plan.missing), repeats);
}

}  // namespace agentforge

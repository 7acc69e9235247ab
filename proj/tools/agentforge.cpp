// agentforge: synthesize tool-use tasks, build rubrics, run rollouts, score
// trajectories, and serve the rollout API.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "agentforge/config.hpp"
#include "agentforge/gateway.hpp"
#include "agentforge/mockenv.hpp"
#include "agentforge/parallel.hpp"
#include "agentforge/prompts.hpp"
#include "agentforge/reward.hpp"
#include "agentforge/rubric.hpp"
#include "agentforge/serialize.hpp"
#include "agentforge/service.hpp"
#include "agentforge/stats.hpp"
#include "agentforge/synthesis.hpp"

namespace fs = std::filesystem;
using namespace agentforge;

namespace {

enum Exit { kOk = 0, kPartial = 1, kUsage = 2 };

/// Raised for missing inputs and bad configuration; maps to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string stub_script;
    std::string prompts_dir;
    std::string log_level = "warn";
    int jobs = 1;
};

Config load_config(const Common& c) {
    Config cfg;
    if (!c.config_path.empty()) {
        if (!fs::exists(c.config_path)) throw UsageError("config file not found: " + c.config_path);
        cfg = Config::load(c.config_path);
    }
    if (!c.stub_script.empty()) {
        cfg.set("backend", "stub");
        cfg.set("stub.script", c.stub_script);
    }
    for (const auto& kv : c.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        cfg.set(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
    }
    if (!c.prompts_dir.empty()) load_prompt_overrides(c.prompts_dir);
    return cfg;
}

std::unique_ptr<Gateway> make_gateway(const Config& cfg) {
    std::shared_ptr<Backend> backend;
    try {
        backend = make_backend(cfg);
    } catch (const std::exception& e) {
        throw UsageError(std::string("backend: ") + e.what());
    }
    return std::make_unique<Gateway>(std::move(backend), gateway_options_from_config(cfg));
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw UsageError("missing " + what);
    if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

fs::path prepare_out(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw UsageError("cannot create output directory " + out + ": " + ec.message());
    return dir;
}

template <typename T>
std::vector<T> load_file(const std::string& path, const std::string& what) {
    require_file(path, what);
    try {
        return load_records<T>(path);
    } catch (const ParseError& e) {
        throw UsageError(path + ":" + std::to_string(e.line()) + ": " + e.what());
    }
}

void write_usage(const fs::path& file, const Gateway& gw, json extra = json::object()) {
    extra["total_tokens"] = gw.tokens_used();
    extra["requests"] = gw.requests();
    extra["retries"] = gw.retries();
    write_file_atomic(file, extra.dump(2) + "\n");
}

std::string maps_jsonl(const MapRegistry& maps) {
    std::string out;
    for (const auto& rec : maps.all()) {
        auto j = rec.map->to_json();
        j["scope"] = rec.scope_key;
        out += j.dump() + "\n";
    }
    return out;
}

AgentFactory llm_agent_factory(Gateway& gw, std::string model, double temperature, int max_tokens) {
    return [&gw, model = std::move(model), temperature, max_tokens] {
        return std::make_unique<LlmAgent>(gw, model, temperature, max_tokens);
    };
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string personas;
    std::string out;
    long limit = -1;
    bool lenient = false;
};

int run_synth(const Common& common, const SynthArgs& a) {
    auto cfg = load_config(common);
    require_file(a.personas, "persona file");
    auto dir = prepare_out(a.out);

    std::ifstream in(a.personas);
    PersonaLoad load;
    try {
        load = load_personas(in, a.lenient);
    } catch (const ParseError& e) {
        throw UsageError(a.personas + ":" + std::to_string(e.line()) + ": " + e.what());
    }
    for (const auto& err : load.errors) std::cerr << a.personas << ":" << err.line << ": skipped: " << err.message << "\n";
    if (a.limit >= 0 && static_cast<std::size_t>(a.limit) < load.records.size()) load.records.resize(a.limit);

    auto gw = make_gateway(cfg);
    Synthesizer synth(*gw, SynthesisConfig::from_config(cfg));
    auto outcomes = synthesize_batch(synth, load.records, common.jobs);

    std::vector<SynthTask> tasks;
    std::vector<RejectionRecord> rejections;
    std::int64_t spent = 0;
    for (const auto& o : outcomes) {
        spent += o.tokens_spent;
        if (o.accepted()) tasks.push_back(o.task());
        else rejections.push_back(o.rejection());
    }
    write_file_atomic(dir / "tasks.jsonl", serialize_lines(tasks));
    write_file_atomic(dir / "rejections.jsonl", serialize_lines(rejections));
    write_usage(dir / "usage.json", *gw,
                json{{"personas", outcomes.size()}, {"accepted", tasks.size()}, {"rejected", rejections.size()},
                     {"tokens_spent", spent}});

    std::cout << "personas: " << outcomes.size() << "  accepted: " << tasks.size()
              << "  rejected: " << rejections.size() << "  tokens: " << spent << "\n";
    for (const auto& r : rejections) std::cout << "  rejected " << r.persona_id << " [" << r.stage << "] " << r.reason << "\n";
    return tasks.empty() ? kPartial : kOk;
}

// ---------------------------------------------------------------------------
// teach
// ---------------------------------------------------------------------------

struct TeachArgs {
    std::string tasks;
    std::string out;
    std::optional<int> k;
    std::optional<double> threshold;
};

int run_teach(const Common& common, const TeachArgs& a) {
    auto cfg = load_config(common);
    if (a.k) cfg.set("teach.demonstrations", std::to_string(*a.k));
    if (a.threshold) cfg.set("teach.coverage_threshold", std::to_string(*a.threshold));
    auto loaded = load_file<SynthTask>(a.tasks, "tasks file");
    auto dir = prepare_out(a.out);

    RubricConfig rc;
    EnvConfig ec;
    try {
        rc = RubricConfig::from_config(cfg);
        ec = EnvConfig::from_config(cfg);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    auto gw = make_gateway(cfg);
    auto maps = std::make_shared<MapRegistry>(cfg.get_bool("env.persist_maps", false));
    Environment env(*gw, ec, maps);
    RubricBuilder builder(*gw, env, rc, llm_agent_factory(*gw, rc.teacher_model, rc.teacher_temperature, ec.max_message_tokens));

    std::vector<std::shared_ptr<const SynthTask>> tasks;
    for (auto& t : loaded) tasks.push_back(std::make_shared<const SynthTask>(std::move(t)));
    auto outcomes = teach_batch(builder, tasks, common.jobs);

    std::vector<Trajectory> trajectories;
    std::vector<Rubric> rubrics;
    std::vector<CoverageReport> coverage;
    std::string dropped;
    std::string calls;
    int failures = 0;
    for (const auto& o : outcomes) {
        trajectories.insert(trajectories.end(), o.trajectories.begin(), o.trajectories.end());
        coverage.push_back(o.coverage);
        if (o.rubric) rubrics.push_back(*o.rubric);
        if (o.drop_reason) {
            dropped += json{{"task_id", o.task_id}, {"reason", *o.drop_reason},
                            {"best_coverage", o.coverage.best.value()}}.dump() + "\n";
            if (*o.drop_reason != "LowCoverage") ++failures;
        }
        for (const auto& c : o.calls) {
            json j = c;
            j["task_id"] = o.task_id;
            calls += j.dump() + "\n";
        }
    }
    write_file_atomic(dir / "trajectories.jsonl", serialize_lines(trajectories));
    write_file_atomic(dir / "rubrics.jsonl", serialize_lines(rubrics));
    write_file_atomic(dir / "coverage.jsonl", serialize_lines(coverage));
    write_file_atomic(dir / "dropped.jsonl", dropped);
    write_file_atomic(dir / "teach_transcripts.jsonl", calls);
    write_file_atomic(dir / "maps.jsonl", maps_jsonl(*maps));
    write_usage(dir / "usage_teach.json", *gw);

    std::cout << "tasks: " << outcomes.size() << "  rubrics: " << rubrics.size()
              << "  dropped: " << outcomes.size() - rubrics.size() << "\n";
    return failures > 0 ? kPartial : kOk;
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

struct RolloutArgs {
    std::string tasks;
    std::string out;
    int group_size = 1;
    std::string group = "g0";
};

int run_rollout(const Common& common, const RolloutArgs& a) {
    auto cfg = load_config(common);
    if (a.group_size < 1) throw UsageError("--group-size must be positive");
    auto loaded = load_file<SynthTask>(a.tasks, "tasks file");
    auto dir = prepare_out(a.out);

    EnvConfig ec;
    try {
        ec = EnvConfig::from_config(cfg);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    auto gw = make_gateway(cfg);
    auto maps = std::make_shared<MapRegistry>(cfg.get_bool("env.persist_maps", false));
    Environment env(*gw, ec, maps);
    auto roles = ModelRoles::from_config(cfg);
    auto factory = llm_agent_factory(*gw, roles.agent, cfg.get_double("agent.temperature", 1.0), ec.max_message_tokens);

    std::vector<std::vector<Trajectory>> groups(loaded.size());
    std::vector<std::shared_ptr<const SynthTask>> tasks;
    for (auto& t : loaded) tasks.push_back(std::make_shared<const SynthTask>(std::move(t)));
    parallel_for(tasks.size(), common.jobs,
                 [&](std::size_t i) { groups[i] = run_group(env, tasks[i], a.group, a.group_size, factory); });

    std::vector<Trajectory> trajectories;
    int errors = 0;
    for (auto& g : groups)
        for (auto& t : g) {
            if (t.terminated == TerminationReason::Error) ++errors;
            trajectories.push_back(std::move(t));
        }
    write_file_atomic(dir / "trajectories.jsonl", serialize_lines(trajectories));
    write_file_atomic(dir / "maps.jsonl", maps_jsonl(*maps));
    write_usage(dir / "usage_rollout.json", *gw);
    std::cout << "trajectories: " << trajectories.size() << "  errors: " << errors << "\n";
    return errors > 0 ? kPartial : kOk;
}

// ---------------------------------------------------------------------------
// judge
// ---------------------------------------------------------------------------

struct JudgeArgs {
    std::string trajectories;
    std::string rubrics;
    std::string out;
    int repeats = 1;
};

int run_judge(const Common& common, const JudgeArgs& a) {
    auto cfg = load_config(common);
    if (a.repeats < 1) throw UsageError("--repeats must be positive");
    auto trajectories = load_file<Trajectory>(a.trajectories, "trajectories file");
    auto rubric_list = load_file<Rubric>(a.rubrics, "rubrics file");
    auto dir = prepare_out(a.out);

    std::map<std::string, Rubric> rubrics;
    for (auto& r : rubric_list) rubrics.emplace(r.task_id, std::move(r));

    auto gw = make_gateway(cfg);
    JudgeConfig jc;
    try {
        jc = JudgeConfig::from_config(cfg);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    Judge judge(*gw, jc);
    auto result = judge_batch(judge, trajectories, rubrics, a.repeats, common.jobs);

    std::string rewards;
    std::string transcripts;
    for (const auto& rec : result.records) {
        rewards += json{{"trajectory_id", rec.trajectory_id}, {"task_id", rec.task_id}, {"repeat", rec.repeat},
                        {"report", rec.report}}.dump() + "\n";
        for (const auto& c : rec.calls) {
            json j = c;
            j["trajectory_id"] = rec.trajectory_id;
            j["task_id"] = rec.task_id;
            j["repeat"] = rec.repeat;
            transcripts += j.dump() + "\n";
        }
    }
    for (const auto& task : result.missing_rubrics)
        for (const auto& t : trajectories)
            if (t.task_id == task)
                rewards += json{{"trajectory_id", t.id}, {"task_id", task},
                                {"error", {{"code", "UnknownRubric"}, {"message", "no rubric for task " + task}}}}
                               .dump() + "\n";
    write_file_atomic(dir / "rewards.jsonl", rewards);
    write_file_atomic(dir / "judge_transcripts.jsonl", transcripts);
    write_file_atomic(dir / "variance.jsonl", serialize_lines(result.variance));
    write_usage(dir / "usage_judge.json", *gw);

    for (const auto& v : result.variance)
        std::cout << v.task_id << "  mean " << v.mean << "  variance " << v.variance << "\n";
    for (const auto& task : result.missing_rubrics) std::cerr << "no rubric for task " << task << "\n";
    return result.missing_rubrics.empty() ? kOk : kPartial;
}

// ---------------------------------------------------------------------------
// stats / validate / serve
// ---------------------------------------------------------------------------

int run_stats(const std::string& dir, bool as_json) {
    if (!fs::is_directory(dir)) throw UsageError("corpus directory not found: " + dir);
    auto s = compute_stats(load_corpus(dir));
    if (as_json) std::cout << to_json(s).dump(2) << "\n";
    else std::cout << format_stats(s);
    return kOk;
}

struct ValidateArgs {
    std::string tasks;
    std::string trajectories;
    std::string rubrics;
    std::string toolspec;
};

template <typename T, typename Check>
int validate_lines(const std::string& path, const std::string& what, Check check) {
    require_file(path, what);
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t number = 0, good = 0;
    int bad = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            check(json::parse(line).get<T>());
            ++good;
        } catch (const ValidationError& e) {
            ++bad;
            std::cout << path << ":" << number << ": " << e.what() << "\n";
        } catch (const std::exception& e) {
            ++bad;
            std::cout << path << ":" << number << ": " << e.what() << "\n";
        }
    }
    std::cout << path << ": " << good << " valid, " << bad << " invalid\n";
    return bad;
}

int run_validate(const ValidateArgs& a) {
    if (a.tasks.empty() && a.trajectories.empty() && a.rubrics.empty() && a.toolspec.empty())
        throw UsageError("nothing to validate; pass --tasks, --trajectories, --rubrics or --toolspec");
    int bad = 0;
    if (!a.tasks.empty())
        bad += validate_lines<SynthTask>(a.tasks, "tasks file", [](const SynthTask& t) {
            validate_task(t);
            if (!t.task_id.empty() && t.task_id != compute_task_id(t))
                throw ValidationError(ValidationError::Rule::InvalidValue, "task_id", "does not match content hash");
        });
    if (!a.trajectories.empty())
        bad += validate_lines<Trajectory>(a.trajectories, "trajectories file",
                                          [](const Trajectory& t) { validate_transcript(t.messages); });
    if (!a.rubrics.empty())
        bad += validate_lines<Rubric>(a.rubrics, "rubrics file", [](const Rubric& r) {
            if (r.subgoals.empty())
                throw ValidationError(ValidationError::Rule::MissingField, "subgoals", "rubric has no subgoals");
        });
    if (!a.toolspec.empty()) {
        require_file(a.toolspec, "tool spec file");
        try {
            auto spec = validate_tool_spec_text(read_text_file(a.toolspec));
            std::cout << a.toolspec << ": valid tool " << spec.name << "\n";
        } catch (const ValidationError& e) {
            ++bad;
            std::cout << a.toolspec << ": " << e.what() << "\n";
        }
    }
    return bad > 0 ? kPartial : kOk;
}

RolloutService* g_service = nullptr;

void handle_signal(int) {
    if (g_service) g_service->stop();
}

struct ServeArgs {
    std::string host;
    int port = -1;
    std::string tasks;
    std::string rubrics;
};

int run_serve(const Common& common, const ServeArgs& a) {
    auto cfg = load_config(common);
    ServiceOptions opts;
    try {
        opts = ServiceOptions::from_config(cfg);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (!a.host.empty()) opts.host = a.host;
    if (a.port >= 0) opts.port = a.port;
    auto gw = make_gateway(cfg);
    RolloutService service(*gw, opts);

    if (!a.tasks.empty()) {
        json bundle{{"tasks", json::array()}, {"rubrics", json::array()}};
        for (const auto& t : load_file<SynthTask>(a.tasks, "tasks file")) bundle["tasks"].push_back(t);
        if (!a.rubrics.empty())
            for (const auto& r : load_file<Rubric>(a.rubrics, "rubrics file")) bundle["rubrics"].push_back(r);
        auto r = service.dispatch("POST", "/tasks", bundle.dump());
        if (r.status != 200) throw UsageError("preloading tasks failed: " + r.body.dump());
    }

    int port = service.bind(opts.host, opts.port);
    if (port < 0) throw UsageError("cannot bind " + opts.host + ":" + std::to_string(opts.port));
    std::cout << "listening on " << opts.host << ":" << port << std::endl;
    g_service = &service;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    service.serve();
    g_service = nullptr;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("agentforge"));

    CLI::App app{"Synthesize tool-use tasks and serve simulated environments for agent RL."};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("agentforge 0.1.0 (protocol ") + std::string(kProtocolVersion) + ")");

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "Config file (key = value)");
        sub->add_option("--set", common.overrides, "Override a config key (key=value); repeatable");
        sub->add_option("--stub", common.stub_script, "Use the scripted stub backend with this script");
        sub->add_option("--prompts", common.prompts_dir, "Directory of prompt template overrides");
        sub->add_option("--log-level", common.log_level, "trace|debug|info|warn|error|off");
        sub->add_option("-j,--jobs", common.jobs, "Parallel workers")->check(CLI::PositiveNumber);
    };

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Personas -> validated tasks");
    synth_cmd->add_option("--personas", synth.personas, "Persona file (one JSON record per line)")->required();
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--limit", synth.limit, "Use only the first N personas");
    synth_cmd->add_flag("--lenient", synth.lenient, "Skip malformed persona lines instead of failing");
    add_common(synth_cmd);

    TeachArgs teach;
    auto* teach_cmd = app.add_subcommand("teach", "Teacher demonstrations, coverage filter and rubrics");
    teach_cmd->add_option("--tasks", teach.tasks, "tasks.jsonl")->required();
    teach_cmd->add_option("--out", teach.out, "Output directory")->required();
    teach_cmd->add_option("--k", teach.k, "Demonstrations per task (default 4)");
    teach_cmd->add_option("--threshold", teach.threshold, "Coverage threshold in (0, 1] (default 0.5)");
    add_common(teach_cmd);

    RolloutArgs rollout;
    auto* rollout_cmd = app.add_subcommand("rollout", "Policy rollouts against the simulated environment");
    rollout_cmd->add_option("--tasks", rollout.tasks, "tasks.jsonl")->required();
    rollout_cmd->add_option("--out", rollout.out, "Output directory")->required();
    rollout_cmd->add_option("--group-size", rollout.group_size, "Rollouts per task sharing one map");
    rollout_cmd->add_option("--group", rollout.group, "Group id");
    add_common(rollout_cmd);

    JudgeArgs judge;
    auto* judge_cmd = app.add_subcommand("judge", "Rubric rewards for trajectories");
    judge_cmd->add_option("--trajectories", judge.trajectories, "trajectories.jsonl")->required();
    judge_cmd->add_option("--rubrics", judge.rubrics, "rubrics.jsonl")->required();
    judge_cmd->add_option("--out", judge.out, "Output directory")->required();
    judge_cmd->add_option("--repeats", judge.repeats, "Score every trajectory R times");
    add_common(judge_cmd);

    std::string stats_dir;
    bool stats_json = false;
    auto* stats_cmd = app.add_subcommand("stats", "Corpus statistics");
    stats_cmd->add_option("--dir", stats_dir, "Corpus directory")->required();
    stats_cmd->add_flag("--json", stats_json, "Print JSON");

    ValidateArgs validate;
    auto* validate_cmd = app.add_subcommand("validate", "Check record files against the schema");
    validate_cmd->add_option("--tasks", validate.tasks, "tasks.jsonl");
    validate_cmd->add_option("--trajectories", validate.trajectories, "trajectories.jsonl");
    validate_cmd->add_option("--rubrics", validate.rubrics, "rubrics.jsonl");
    validate_cmd->add_option("--toolspec", validate.toolspec, "A single tool description (JSON)");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the rollout HTTP API");
    serve_cmd->add_option("--host", serve.host, "Bind address");
    serve_cmd->add_option("--port", serve.port, "Port (0 picks a free one)");
    serve_cmd->add_option("--tasks", serve.tasks, "Preload tasks.jsonl");
    serve_cmd->add_option("--rubrics", serve.rubrics, "Preload rubrics.jsonl");
    add_common(serve_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(common.log_level));
        if (*synth_cmd) return run_synth(common, synth);
        if (*teach_cmd) return run_teach(common, teach);
        if (*rollout_cmd) return run_rollout(common, rollout);
        if (*judge_cmd) return run_judge(common, judge);
        if (*stats_cmd) return run_stats(stats_dir, stats_json);
        if (*validate_cmd) return run_validate(validate);
        if (*serve_cmd) return run_serve(common, serve);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ParseError& e) {
        std::cerr << "error: line " << e.line() << ": " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kPartial;
    }
    return kUsage;
}

#include "agentforge/synthesis.hpp"

#include <algorithm>
#include <cctype>

#include <spdlog/spdlog.h>

#include "agentforge/parallel.hpp"
#include "agentforge/prompts.hpp"
#include "agentforge/text.hpp"

namespace agentforge {

SynthesisConfig SynthesisConfig::from_config(const Config& cfg) {
    SynthesisConfig c;
    auto roles = ModelRoles::from_config(cfg);
    c.model = roles.synthesizer;
    c.solver_model = cfg.get_string("model.solver", roles.synthesizer);
    c.temperature = cfg.get_double("synth.temperature", c.temperature);
    c.attempts = static_cast<int>(cfg.get_int("synth.attempts", c.attempts));
    c.max_tokens = static_cast<int>(cfg.get_int("synth.max_tokens", c.max_tokens));
    c.target_tools = static_cast<int>(cfg.get_int("synth.target_tools", c.target_tools));
    c.consistency_samples = static_cast<int>(cfg.get_int("synth.consistency_samples", c.consistency_samples));
    if (c.attempts < 1) throw std::invalid_argument("synth.attempts must be positive");
    return c;
}

void to_json(json& j, const RejectionRecord& v) {
    j = json{{"persona_id", v.persona_id}, {"stage", v.stage}, {"reason", v.reason}, {"detail", v.detail}};
}

void from_json(const json& j, RejectionRecord& v) {
    v.persona_id = j.at("persona_id").get<std::string>();
    v.stage = j.at("stage").get<std::string>();
    v.reason = j.at("reason").get<std::string>();
    v.detail = j.value("detail", std::string{});
}

void to_json(json& j, const ReasoningTask& v) {
    j = json{{"problem", v.problem}, {"answer", v.answer}, {"scenario_variant", v.scenario_variant}};
}

void from_json(const json& j, ReasoningTask& v) {
    v.problem = j.at("problem").get<std::string>();
    v.answer = j.at("answer").get<std::string>();
    v.scenario_variant = j.value("scenario_variant", std::string{});
    if (trim(v.answer).empty()) throw ValidationError(ValidationError::Rule::MissingField, "answer", "empty answer");
}

// ---------------------------------------------------------------------------
// Personas
// ---------------------------------------------------------------------------

PersonaLoad load_personas(std::istream& in, bool lenient) {
    PersonaLoad out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
            PersonaRecord p;
            if (j.contains("description")) p.description = j.at("description").get<std::string>();
            else if (j.contains("persona")) p.description = j.at("persona").get<std::string>();
            else throw std::invalid_argument("missing 'description' or 'persona'");
            if (trim(p.description).empty()) throw std::invalid_argument("empty persona description");
            p.id = j.contains("id") ? (j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump())
                                    : "p" + std::to_string(number);
            out.records.push_back(std::move(p));
        } catch (const std::exception& e) {
            if (!lenient) throw ParseError(number, e.what());
            out.errors.push_back({number, e.what()});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage output parsers
// ---------------------------------------------------------------------------

std::vector<WorkflowStep> parse_workflow(std::string_view text, int min_steps, int max_steps) {
    auto block = extract_json_block(text);
    if (!block) throw std::invalid_argument("no JSON found");
    json j = json::parse(*block);
    const json& steps = j.is_object() ? j.at("steps") : j;
    if (!steps.is_array()) throw std::invalid_argument("'steps' is not an array");

    std::vector<WorkflowStep> out;
    for (const auto& s : steps) {
        WorkflowStep step;
        step.index = static_cast<int>(out.size()) + 1;
        if (s.is_string()) {
            step.description = s.get<std::string>();
        } else {
            step.description = s.at("description").get<std::string>();
            const char* key = s.contains("tools") ? "tools" : "expected_tools";
            if (s.contains(key))
                for (const auto& t : s.at(key)) step.expected_tools.push_back(t.get<std::string>());
        }
        step.description = std::string(trim(step.description));
        if (step.description.empty()) throw std::invalid_argument("step " + std::to_string(step.index) + " is empty");
        out.push_back(std::move(step));
    }
    const auto n = static_cast<int>(out.size());
    if (n < min_steps || n > max_steps)
        throw std::invalid_argument("workflow has " + std::to_string(n) + " steps, expected " +
                                    std::to_string(min_steps) + "-" + std::to_string(max_steps));
    return out;
}

ToolsetDraft parse_toolset(std::string_view text) {
    auto block = extract_json_block(text);
    if (!block) throw ValidationError(ValidationError::Rule::InvalidValue, "", "no JSON found");
    json j = parse_json_strict(*block);
    if (!j.is_object()) throw ValidationError(ValidationError::Rule::InvalidValue, "", "expected an object");
    if (!j.contains("tools")) throw ValidationError(ValidationError::Rule::MissingField, "tools", "missing tools");

    ToolsetDraft draft;
    draft.tools = validate_toolset(j.at("tools"));
    if (j.contains("forbidden") && j.at("forbidden").is_array())
        for (const auto& f : j.at("forbidden")) {
            auto c = f.get<ForbiddenConstraint>();
            if (!trim(c.description).empty()) draft.forbidden.push_back(std::move(c));
        }
    if (draft.forbidden.empty())
        throw ValidationError(ValidationError::Rule::MissingField, "forbidden", "at least one forbidden behavior required");
    return draft;
}

bool adds_decisive_detail(std::string_view instruction, std::string_view hidden_context) {
    const auto inst = normalize_text(instruction);
    for (const auto& sentence : split_sentences(hidden_context))
        if (inst.find(sentence) == std::string::npos) return true;
    return false;
}

bool preserves_numerals(std::string_view original, std::string_view variant) {
    auto a = extract_numerals(original);
    auto b = extract_numerals(variant);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
}

FuzzyTask parse_fuzzy(std::string_view text, const std::vector<WorkflowStep>& workflow) {
    auto block = extract_json_block(text);
    if (!block) throw StageFailure("fuzzify", "DegenerateRewrite", "no JSON found");
    json j = json::parse(*block);
    FuzzyTask out;
    out.instruction = std::string(trim(j.value("instruction", std::string{})));
    out.hidden_context = std::string(trim(j.value("hidden_context", std::string{})));
    if (out.instruction.empty()) throw StageFailure("fuzzify", "DegenerateRewrite", "empty instruction");
    if (out.hidden_context.empty()) throw StageFailure("fuzzify", "DegenerateRewrite", "empty hidden context");
    if (!adds_decisive_detail(out.instruction, out.hidden_context))
        throw StageFailure("fuzzify", "DegenerateRewrite", "hidden context adds nothing beyond the instruction");

    const auto inst = normalize_text(out.instruction);
    int leaked = 0;
    for (const auto& step : workflow) {
        auto d = normalize_text(step.description);
        while (!d.empty() && std::ispunct(static_cast<unsigned char>(d.back()))) d.pop_back();
        if (!d.empty() && inst.find(d) != std::string::npos) ++leaked;
    }
    if (leaked >= 2)
        throw StageFailure("fuzzify", "DegenerateRewrite",
                           "instruction spells out " + std::to_string(leaked) + " workflow steps");
    return out;
}

std::string render_workflow(const std::vector<WorkflowStep>& workflow) {
    std::string out;
    for (const auto& s : workflow) {
        out += std::to_string(s.index) + ". " + s.description;
        if (!s.expected_tools.empty()) {
            out += " (tools:";
            for (const auto& t : s.expected_tools) out += " " + t;
            out += ")";
        }
        out += '\n';
    }
    return out;
}

namespace {

std::string describe(const ValidationError& e) { return e.what(); }

}  // namespace

// ---------------------------------------------------------------------------
// Synthesizer
// ---------------------------------------------------------------------------

Synthesizer::Synthesizer(Gateway& gateway, SynthesisConfig config) : gateway_(gateway), config_(std::move(config)) {}

ChatResponse Synthesizer::ask(const std::string& name, const std::map<std::string, std::string>& vars,
                              double temperature, std::int64_t& tokens, const std::string& feedback) {
    const auto& tmpl = prompt(name);
    ChatRequest req;
    req.model_tag = name == "solve_reasoning" ? config_.solver_model : config_.model;
    req.temperature = temperature;
    req.max_tokens = config_.max_tokens;
    if (!trim(tmpl.system).empty()) req.messages.push_back({Role::System, tmpl.system, std::nullopt, 0});
    auto user = render_template(tmpl.user, vars);
    if (!feedback.empty()) user += "\n\nYour previous reply was rejected: " + feedback + "\nTry again.";
    req.messages.push_back({Role::User, std::move(user), std::nullopt, 1});
    auto resp = gateway_.complete(req);
    tokens += resp.usage_tokens;
    return resp;
}

std::vector<WorkflowStep> Synthesizer::generate_workflow(const PersonaRecord& persona, std::int64_t& tokens) {
    const std::map<std::string, std::string> vars{{"persona", persona.description},
                                                  {"min_steps", std::to_string(config_.min_steps)},
                                                  {"max_steps", std::to_string(config_.max_steps)}};
    std::string feedback;
    for (int attempt = 0; attempt < config_.attempts; ++attempt) {
        auto resp = ask("workflow", vars, config_.temperature, tokens, feedback);
        try {
            return parse_workflow(resp.content, config_.min_steps, config_.max_steps);
        } catch (const std::exception& e) {
            feedback = e.what();
            spdlog::debug("persona {}: workflow attempt {} rejected: {}", persona.id, attempt + 1, feedback);
        }
    }
    throw StageFailure("workflow", "UnparseableWorkflow", feedback);
}

ToolsetDraft Synthesizer::generate_toolset(const PersonaRecord& persona, const std::vector<WorkflowStep>& workflow,
                                           std::int64_t& tokens) {
    const std::map<std::string, std::string> vars{{"persona", persona.description},
                                                  {"workflow", render_workflow(workflow)},
                                                  {"target_tools", std::to_string(config_.target_tools)}};
    std::string feedback;
    for (int attempt = 0; attempt < config_.attempts; ++attempt) {
        auto resp = ask("toolset", vars, config_.temperature, tokens, feedback);
        try {
            return parse_toolset(resp.content);
        } catch (const ValidationError& e) {
            feedback = describe(e);
        } catch (const std::exception& e) {
            feedback = e.what();
        }
        spdlog::debug("persona {}: toolset attempt {} rejected: {}", persona.id, attempt + 1, feedback);
    }
    throw StageFailure("toolset", "InvalidToolSpec", feedback);
}

FuzzyTask Synthesizer::fuzzify(const PersonaRecord& persona, const std::vector<WorkflowStep>& workflow,
                               const std::vector<ToolSpec>& toolset, std::int64_t& tokens) {
    const std::map<std::string, std::string> vars{{"persona", persona.description},
                                                  {"workflow", render_workflow(workflow)},
                                                  {"tools", json(toolset).dump(2)}};
    std::string feedback;
    for (int attempt = 0; attempt < config_.attempts; ++attempt) {
        auto resp = ask("fuzzify", vars, config_.temperature, tokens, feedback);
        try {
            return parse_fuzzy(resp.content, workflow);
        } catch (const StageFailure& e) {
            feedback = e.what();
        } catch (const std::exception& e) {
            feedback = e.what();
        }
        spdlog::debug("persona {}: fuzzify attempt {} rejected: {}", persona.id, attempt + 1, feedback);
    }
    throw StageFailure("fuzzify", "DegenerateRewrite", feedback);
}

std::string Synthesizer::rewrite_reasoning_task(const std::string& problem, const PersonaRecord& persona,
                                                std::int64_t& tokens) {
    if (trim(problem).empty()) throw std::invalid_argument("empty problem");
    if (trim(persona.description).empty()) return problem;

    const std::map<std::string, std::string> vars{{"persona", persona.description}, {"problem", problem}};
    std::string feedback;
    for (int attempt = 0; attempt < config_.attempts; ++attempt) {
        auto resp = ask("rewrite_reasoning", vars, config_.temperature, tokens, feedback);
        auto scenario = extract_tag(resp.content, "scenario");
        if (!scenario || trim(*scenario).empty()) {
            feedback = "no <scenario> block";
        } else if (!preserves_numerals(problem, *scenario)) {
            feedback = "the numbers differ from the original problem";
        } else {
            return std::string(trim(*scenario));
        }
    }
    throw StageFailure("rewrite", "UnparseableRewrite", feedback);
}

ConsistencyDecision decide_consistency(std::vector<std::optional<std::string>> answers) {
    ConsistencyDecision d;
    d.answers = std::move(answers);
    std::optional<std::string> first;
    bool agree = !d.answers.empty();
    for (const auto& a : d.answers) {
        if (!a) {
            agree = false;
            break;
        }
        auto c = canonicalize_answer(*a);
        if (c.empty()) {
            agree = false;
            break;
        }
        if (!first) first = c;
        else if (*first != c) {
            agree = false;
            break;
        }
    }
    d.keep = agree;
    if (agree) d.consensus = first;
    return d;
}

ConsistencyDecision Synthesizer::self_consistency_filter(const ReasoningTask& task, int samples,
                                                         std::int64_t& tokens) {
    if (samples < 2) throw std::invalid_argument("self-consistency needs at least 2 samples");
    const auto& problem = task.scenario_variant.empty() ? task.problem : task.scenario_variant;
    std::vector<std::optional<std::string>> answers;
    for (int i = 0; i < samples; ++i) {
        try {
            auto resp = ask("solve_reasoning", {{"problem", problem}}, config_.temperature, tokens);
            answers.push_back(extract_tag(resp.content, "answer"));
        } catch (const GatewayError& e) {
            spdlog::warn("solver failed: {}", e.what());
            answers.push_back(std::nullopt);
        }
    }
    return decide_consistency(std::move(answers));
}

SynthesisOutcome Synthesizer::synth_pipeline(const PersonaRecord& persona) {
    SynthesisOutcome out;
    std::string stage = "workflow";
    try {
        SynthTask task;
        task.persona = persona;
        task.workflow = generate_workflow(persona, out.tokens_spent);
        stage = "toolset";
        auto draft = generate_toolset(persona, task.workflow, out.tokens_spent);
        task.toolset = std::move(draft.tools);
        task.forbidden = std::move(draft.forbidden);
        stage = "fuzzify";
        auto fuzzy = fuzzify(persona, task.workflow, task.toolset, out.tokens_spent);
        task.instruction = std::move(fuzzy.instruction);
        task.hidden_context = std::move(fuzzy.hidden_context);
        task.task_id = compute_task_id(task);
        validate_task(task);
        out.result = std::move(task);
    } catch (const StageFailure& e) {
        out.result = RejectionRecord{persona.id, e.stage(), e.reason(), e.what()};
    } catch (const GatewayError& e) {
        out.result = RejectionRecord{persona.id, stage, "GatewayError", e.what()};
    } catch (const ValidationError& e) {
        out.result = RejectionRecord{persona.id, stage, "ValidationError", describe(e)};
    }
    if (!out.accepted())
        spdlog::info("persona {} rejected at {}: {}", persona.id, out.rejection().stage, out.rejection().reason);
    return out;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

std::vector<SynthesisOutcome> synthesize_batch(Synthesizer& synth, const std::vector<PersonaRecord>& personas,
                                               int jobs) {
    std::vector<SynthesisOutcome> out(personas.size());
    parallel_for(personas.size(), jobs, [&](std::size_t i) { out[i] = synth.synth_pipeline(personas[i]); });
    return out;
}

std::vector<SynthesisOutcome> synthesize_batch_serial(Synthesizer& synth,
                                                      const std::vector<PersonaRecord>& personas) {
    std::vector<SynthesisOutcome> out;
    out.reserve(personas.size());
    for (const auto& p : personas) out.push_back(synth.synth_pipeline(p));
    return out;
}

}  // namespace agentforge

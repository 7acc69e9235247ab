#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "agentforge/schema.hpp"
#include "agentforge/serialize.hpp"
#include "agentforge/text.hpp"
#include "test_support.hpp"

using namespace agentforge;
using Rule = ValidationError::Rule;

namespace {

Rule rule_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const ValidationError& e) {
        return e.rule();
    }
    FAIL("expected ValidationError");
    return Rule::InvalidValue;
}

json weather_tool() {
    return json::parse(R"({
        "name": "get_weather",
        "description": "Current weather",
        "parameters": {
            "type": "object",
            "properties": {
                "city": {"type": "string", "description": "City name"},
                "days": {"type": "integer"}
            },
            "required": ["city"]
        }
    })");
}

}  // namespace

TEST_CASE("tool spec: bare and wrapped layouts validate to the same spec") {
    auto bare = validate_tool_spec(weather_tool());
    auto wrapped = validate_tool_spec(json{{"type", "function"}, {"function", weather_tool()}});
    CHECK(bare == wrapped);
    CHECK(bare.name == "get_weather");
    REQUIRE(bare.parameters.size() == 2);
    CHECK(bare.parameters[0].required);
    CHECK_FALSE(bare.parameters[1].required);
    CHECK(bare.parameters[1].type == SemanticType::Integer);
    CHECK(bare.required_count() == 1);
}

TEST_CASE("tool spec: each rule is reported") {
    auto spec = weather_tool();

    auto no_name = spec;
    no_name.erase("name");
    CHECK(rule_of([&] { validate_tool_spec(no_name); }) == Rule::MissingField);

    auto bad_name = spec;
    bad_name["name"] = "get-weather";
    CHECK(rule_of([&] { validate_tool_spec(bad_name); }) == Rule::BadIdentifier);

    auto digit_name = spec;
    digit_name["name"] = "1tool";
    CHECK(rule_of([&] { validate_tool_spec(digit_name); }) == Rule::BadIdentifier);

    auto bad_type = spec;
    bad_type["parameters"]["properties"]["days"]["type"] = "float";
    CHECK(rule_of([&] { validate_tool_spec(bad_type); }) == Rule::UnknownSemanticType);

    auto dup_required = spec;
    dup_required["parameters"]["required"] = {"city", "city"};
    CHECK(rule_of([&] { validate_tool_spec(dup_required); }) == Rule::DuplicateParameter);

    auto undeclared = spec;
    undeclared["parameters"]["required"] = {"country"};
    CHECK(rule_of([&] { validate_tool_spec(undeclared); }) == Rule::MissingField);

    auto not_object = spec;
    not_object["parameters"]["type"] = "array";
    CHECK(rule_of([&] { validate_tool_spec(not_object); }) == Rule::InvalidValue);
}

TEST_CASE("tool spec: duplicate property keys in text are DuplicateParameter") {
    const std::string text = R"({"name": "f", "parameters": {"type": "object",
        "properties": {"a": {"type": "string"}, "a": {"type": "integer"}}}})";
    try {
        validate_tool_spec_text(text);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.rule() == Rule::DuplicateParameter);
        CHECK(e.path() == "parameters.properties.a");
    }
    // Elsewhere a duplicate key is merely invalid.
    CHECK(rule_of([] { parse_json_strict(R"({"x": 1, "x": 2})"); }) == Rule::InvalidValue);
    CHECK_NOTHROW(parse_json_strict(R"({"x": [{"y": 1}, {"y": 2}]})"));
}

TEST_CASE("toolset: duplicate tool names and element paths") {
    auto a = weather_tool();
    CHECK(rule_of([&] { validate_toolset(json::array({a, a})); }) == Rule::DuplicateTool);

    auto b = a;
    b["name"] = "bad name";
    try {
        validate_toolset(json::array({a, b}));
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.path() == "[1].name");
        CHECK(std::string(e.what()).find("BadIdentifier") != std::string::npos);
        CHECK(e.detail().find("BadIdentifier") == std::string::npos);
    }
}

TEST_CASE("rewards: exact rational arithmetic") {
    auto r = make_reward_report(1, {4, 7}, {3, 5});
    CHECK(r.reward_exact == Rational{41, 70});
    CHECK(r.reward == doctest::Approx(41.0 / 70.0).epsilon(1e-15));
    CHECK(make_reward_report(0, {7, 7}, {5, 5}).reward_exact == Rational{0, 1});
    CHECK(make_reward_report(1, {7, 7}, {5, 5}).reward_exact == Rational{1, 1});
    // An empty checklist is vacuously satisfied.
    CHECK(make_reward_report(1, {2, 4}, {0, 0}).reward_exact == Rational{3, 4});
    CHECK(Rational::make(6, -8) == Rational{-3, 4});
    CHECK_THROWS_AS(Rational::make(1, 0), std::invalid_argument);
}

TEST_CASE("task id depends on persona, workflow and toolset only") {
    auto t = testsupport::tiny_task();
    auto id = compute_task_id(t);
    CHECK(id.size() == 16);
    auto u = t;
    u.instruction = "something else";
    u.hidden_context = "other";
    CHECK(compute_task_id(u) == id);
    u.workflow[0].description = "Look up something else";
    CHECK(compute_task_id(u) != id);
}

TEST_CASE("validate_task rejects structural problems") {
    auto t = testsupport::tiny_task();
    CHECK_NOTHROW(validate_task(t));
    auto empty = t;
    empty.toolset.clear();
    CHECK(rule_of([&] { validate_task(empty); }) == Rule::MissingField);
    auto dup = t;
    dup.toolset[1].name = "T0";
    CHECK(rule_of([&] { validate_task(dup); }) == Rule::DuplicateTool);
    auto gap = t;
    gap.workflow[1].index = 3;
    CHECK(rule_of([&] { validate_task(gap); }) == Rule::InvalidValue);
    auto no_instruction = t;
    no_instruction.instruction = "  ";
    CHECK(rule_of([&] { validate_task(no_instruction); }) == Rule::MissingField);
}

TEST_CASE("transcript ordering rules") {
    auto call = canonicalize_call("T0", json{{"q", "x"}});
    std::vector<Message> ok{{Role::User, "hi", std::nullopt, 0},
                            {Role::ToolCall, "c", call, 1},
                            {Role::ToolResponse, "r", std::nullopt, 2}};
    CHECK_NOTHROW(validate_transcript(ok));

    auto bad_turns = ok;
    bad_turns[2].turn = 1;
    CHECK_THROWS_AS(validate_transcript(bad_turns), ValidationError);

    auto orphan = ok;
    orphan[1] = {Role::Assistant, "hm", std::nullopt, 1};
    CHECK_THROWS_AS(validate_transcript(orphan), ValidationError);

    auto missing_call = ok;
    missing_call[1].call.reset();
    CHECK_THROWS_AS(validate_transcript(missing_call), ValidationError);

    CHECK_NOTHROW(validate_transcript(testsupport::newsletter_trajectory().messages));
}

TEST_CASE("canonical calls: known equivalences") {
    auto a = canonicalize_call("T", json::parse(R"({"b": 2.0, "a": "  x  "})"));
    auto b = canonicalize_call(" T ", json::parse(R"({"a": "x", "b": 2})"));
    CHECK(a == b);
    CHECK(a.key() == R"(T({"a":"x","b":2}))");
    CHECK(canonicalize_call("T", json::parse(R"({"n": 0.5})")) != canonicalize_call("T", json::parse(R"({"n": 0.25})")));
    CHECK(canonicalize_call("T", json::parse(R"({"n": -0.0})")) == canonicalize_call("T", json::parse(R"({"n": 0})")));
    std::vector<ToolSpec> toolset{validate_tool_spec(weather_tool())};
    CHECK_THROWS_AS(canonicalize_call("nope", json::object(), toolset), UnknownTool);
}

// ---------------------------------------------------------------------------
// Properties
// ---------------------------------------------------------------------------

namespace {

struct Gen {
    std::mt19937_64 rng;
    explicit Gen(std::uint64_t seed) : rng(seed) {}

    int below(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }
    bool coin() { return below(2) == 0; }

    std::string word() {
        static const char* words[] = {"alpha", "beta", "gamma", "New York", "x", "42", "", "a b", "ünï"};
        return words[below(9)];
    }

    json scalar() {
        switch (below(5)) {
        case 0: return word();
        case 1: return below(2000) - 1000;
        case 2: return (below(2000) - 1000) / 8.0;
        case 3: return coin();
        default: return nullptr;
        }
    }

    json value(int depth) {
        if (depth <= 0 || below(3) != 0) return scalar();
        if (coin()) {
            json arr = json::array();
            for (int i = below(4); i > 0; --i) arr.push_back(value(depth - 1));
            return arr;
        }
        return object(depth - 1);
    }

    json object(int depth) {
        json obj = json::object();
        static const char* keys[] = {"q", "city", "limit", "tags", "z", "a", "mode"};
        for (int i = below(5); i > 0; --i) obj[keys[below(7)]] = value(depth);
        return obj;
    }

    /// Same meaning, different spelling: key order shuffled, strings padded,
    /// integral numbers written as floats.
    json respell(const json& v) {
        if (v.is_object()) {
            std::vector<std::string> keys;
            for (const auto& [k, _] : v.items()) keys.push_back(k);
            std::shuffle(keys.begin(), keys.end(), rng);
            json out = json::object();
            for (const auto& k : keys) out[k] = respell(v.at(k));
            return out;
        }
        if (v.is_array()) {
            json out = json::array();
            for (const auto& e : v) out.push_back(respell(e));
            return out;
        }
        if (v.is_string()) return std::string(below(3), ' ') + v.get<std::string>() + std::string(below(3), '\t');
        if (v.is_number_integer() && coin()) return static_cast<double>(v.get<std::int64_t>());
        return v;
    }
};

/// Independent semantic equality: trimmed strings, numeric value equality,
/// order-insensitive objects.
bool same_meaning(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return a.get<double>() == b.get<double>();
    if (a.is_string() && b.is_string()) return trim(a.get<std::string>()) == trim(b.get<std::string>());
    if (a.type() != b.type()) return false;
    if (a.is_array()) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (!same_meaning(a[i], b[i])) return false;
        return true;
    }
    if (a.is_object()) {
        if (a.size() != b.size()) return false;
        for (const auto& [k, v] : a.items())
            if (!b.contains(k) || !same_meaning(v, b.at(k))) return false;
        return true;
    }
    return a == b;
}

}  // namespace

TEST_CASE("property: canonical keys agree exactly with semantic equality") {
    Gen g(0xC0FFEE);
    for (int i = 0; i < 1000; ++i) {
        auto x = g.object(3);
        auto respelled = g.respell(x);
        auto cx = canonicalize_call("Tool", x);
        INFO("args: " << x.dump());
        CHECK(cx == canonicalize_call("Tool", respelled));
        CHECK(canonicalize_call("Tool", cx.args) == cx);  // idempotent

        auto y = g.object(3);
        const bool eq_key = canonicalize_call("Tool", y).key() == cx.key();
        CHECK(eq_key == same_meaning(x, y));
    }
}

TEST_CASE("property: records survive a serialization round trip") {
    Gen g(7);
    for (int i = 0; i < 300; ++i) {
        auto t = testsupport::tiny_task(1 + g.below(4), "p" + std::to_string(i));
        t.persona.description += " " + g.word();
        t.instruction = "Do " + g.word() + " \"quoted\"\n";
        t.toolset[0].parameters.push_back({"n", SemanticType::Number, g.word(), g.coin()});
        t.task_id = compute_task_id(t);
        CHECK(deserialize<SynthTask>(serialize(t)) == t);

        Trajectory tr;
        tr.id = "tr" + std::to_string(i);
        tr.task_id = t.task_id;
        int turn = 0;
        tr.messages.push_back({Role::User, t.instruction, std::nullopt, turn++});
        for (int k = g.below(4); k > 0; --k) {
            auto call = canonicalize_call("T0", g.object(2));
            tr.messages.push_back({Role::ToolCall, call.key(), call, turn++});
            tr.messages.push_back({Role::ToolResponse, g.value(2).dump(), std::nullopt, turn++});
        }
        if (g.coin()) tr.final_answer = g.word();
        tr.terminated = g.coin() ? TerminationReason::Answered : TerminationReason::TurnLimit;
        CHECK(deserialize<Trajectory>(serialize(tr)) == tr);

        auto report = make_reward_report(g.below(2), {g.below(8), 7}, {g.below(6), 5});
        CHECK(deserialize<RewardReport>(serialize(report)) == report);
    }
}

TEST_CASE("record files: strict and lenient readers") {
    const std::string text = serialize(testsupport::tiny_task()) + "\n\nnot json\n";
    std::istringstream strict(text);
    try {
        read_records<SynthTask>(strict);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::istringstream lenient(text);
    std::vector<LineError> errors;
    auto records = read_records<SynthTask>(lenient, &errors);
    CHECK(records.size() == 1);
    REQUIRE(errors.size() == 1);
    CHECK(errors[0].line == 3);
}

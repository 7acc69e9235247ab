#include <doctest.h>

#include <set>
#include <thread>

#include "agentforge/mockenv.hpp"
#include "test_support.hpp"

using namespace agentforge;
using testsupport::rule;
using testsupport::tool_msg;

namespace {

struct Rig {
    std::shared_ptr<StubBackend> stub;
    Gateway gateway;
    Environment env;
    std::shared_ptr<const SynthTask> task;

    explicit Rig(std::vector<json> rules, EnvConfig config = {}, bool persist = false, int tools = 2)
        : stub(testsupport::make_stub(rules)),
          gateway(stub, testsupport::fast_options()),
          env(gateway, config, std::make_shared<MapRegistry>(persist)),
          task(std::make_shared<const SynthTask>(testsupport::tiny_task(tools))) {}

    Session open(const std::string& group = "g") {
        return env.reset(task, group.empty() ? MapScope::fresh() : MapScope::shared(group));
    }
};

std::vector<json> with_env(std::vector<json> front, const std::string& user_reply = "Here is what you need.") {
    for (auto& r : testsupport::env_rules(user_reply)) front.push_back(r);
    return front;
}

}  // namespace

TEST_CASE("reset: system prompt lists tools and never contains the hidden context") {
    Rig rig(with_env({}));
    auto s = rig.open();
    REQUIRE(s.transcript.size() == 2);
    CHECK(s.transcript[0].role == Role::System);
    CHECK(s.transcript[1].role == Role::User);
    CHECK(s.transcript[1].content == rig.task->instruction);
    CHECK(s.transcript[0].content.find("\"T1\"") != std::string::npos);
    CHECK(s.transcript[0].content.find(rig.task->instruction) != std::string::npos);
    CHECK(s.transcript[0].content.find("4471-B") == std::string::npos);
    CHECK(s.active());
}

TEST_CASE("tool calls: NEW appends, an identical call replays from the map") {
    Rig rig(with_env({}));
    auto s = rig.open();
    auto r1 = rig.env.step(s, tool_msg("T0", {{"q", "alpha"}}));
    CHECK(r1.kind == ReplyKind::ToolResponse);
    CHECK_FALSE(r1.map_hit);
    CHECK(r1.content == R"(result of T0({"q":"alpha"}))");
    const auto calls = rig.stub->calls();

    auto r2 = rig.env.step(s, tool_msg("T0", {{"q", " alpha "}}));
    CHECK(r2.map_hit);
    CHECK(r2.content == r1.content);
    CHECK(rig.stub->calls() == calls);  // served without a simulator call
    CHECK(s.map->size() == 1);
    CHECK(s.transcript.back().role == Role::ToolResponse);
    CHECK_NOTHROW(validate_transcript(s.transcript));
}

TEST_CASE("tool calls: MATCH reuses a semantically equivalent entry") {
    Rig rig(with_env({rule({R"(Incoming call:\nT0\(\{"q":"NYC"\}\))"}, {"MATCH 0"})}));
    auto s = rig.open();
    auto first = rig.env.step(s, tool_msg("T0", {{"q", "New York"}}));
    auto second = rig.env.step(s, tool_msg("T0", {{"q", "NYC"}}));
    CHECK(second.map_hit);
    CHECK(second.content == first.content);
    CHECK(s.map->size() == 1);
}

TEST_CASE("tool calls: out-of-range MATCH and garbage degrade to an error observation") {
    Rig rig(std::vector<json>{rule({R"(\[sim:tool\])"}, {"MATCH 5", "I am a teapot", "NEW"})});
    auto s = rig.open();
    auto r = rig.env.step(s, tool_msg("T0", {{"q", "x"}}));
    CHECK(r.kind == ReplyKind::ToolResponse);
    CHECK(r.content.find("failed to produce a response") != std::string::npos);
    CHECK(rig.stub->calls() == 3);
    CHECK(s.map->size() == 0);
    CHECK(s.active());
}

TEST_CASE("malformed calls are answered locally with the reason") {
    Rig rig(with_env({}));
    auto s = rig.open();
    auto unknown = rig.env.step(s, tool_msg("Nope", json::object()));
    CHECK(unknown.content.find("unknown tool 'Nope'") != std::string::npos);
    CHECK(unknown.content.find("T0, T1") != std::string::npos);
    auto missing = rig.env.step(s, tool_msg("T0", json::object()));
    CHECK(missing.content.find("missing required parameter 'q'") != std::string::npos);
    auto typed = rig.env.step(s, tool_msg("T0", {{"q", 3}}));
    CHECK(typed.content.find("must be of type string") != std::string::npos);
    auto extra = rig.env.step(s, tool_msg("T0", {{"q", "x"}, {"zz", 1}}));
    CHECK(extra.content.find("unexpected parameter 'zz'") != std::string::npos);
    auto bad_args = rig.env.step(s, agent_message_from_json(json::parse(
                                        R"({"tool_call": {"name": "T0", "arguments": "{not json"}})")));
    CHECK(bad_args.content.find("must be a JSON object") != std::string::npos);
    CHECK(rig.stub->calls() == 0);
    CHECK(s.map->size() == 0);
    CHECK(s.tool_calls == 5);
}

TEST_CASE("text-form tool calls are recognised") {
    Rig rig(with_env({}));
    auto s = rig.open();
    auto r = rig.env.step(s, AgentMessage::text(R"(Let me check. <tool_call>{"name": "T1", "arguments": {"q": "z"}}</tool_call>)"));
    CHECK(r.kind == ReplyKind::ToolResponse);
    CHECK(r.content == R"(result of T1({"q":"z"}))");
    REQUIRE(s.transcript[2].call.has_value());
    CHECK(s.transcript[2].call->tool == "T1");
}

TEST_CASE("user queries and answers") {
    Rig rig(with_env({}, "It is order 4471-B."));
    auto s = rig.open();
    auto r = rig.env.step(s, AgentMessage::text("Which order do you mean?"));
    CHECK(r.kind == ReplyKind::UserReply);
    CHECK(r.content == "It is order 4471-B.");
    CHECK(s.user_queries == 1);

    auto done = rig.env.step(s, AgentMessage::text("Done. <answer> shipped </answer>"));
    CHECK(done.kind == ReplyKind::Terminal);
    CHECK(done.reason == TerminationReason::Answered);
    CHECK(s.final_answer == std::string("shipped"));
    CHECK(s.status == SessionStatus::Answered);
    CHECK_THROWS_AS(rig.env.step(s, AgentMessage::text("again")), SessionTerminated);
    auto t = s.trajectory();
    CHECK(t.terminated == TerminationReason::Answered);
    CHECK(t.task_id == rig.task->task_id);
}

TEST_CASE("a user simulator that dumps the whole background is re-asked, then falls back") {
    Rig rig(std::vector<json>{rule({R"(\[sim:user\])"}, {"The secret order number is 4471-B.   Deliver by Friday."})});
    auto s = rig.open();
    auto r = rig.env.step(s, AgentMessage::text("Tell me everything"));
    CHECK(r.content == kUserFallbackReply);
    CHECK(rig.stub->calls() == rig.env.config().simulator_attempts);
}

TEST_CASE("turn limit: an agent that never answers stops at exactly max_turns") {
    for (int max_turns : {1, 3, 16}) {
        EnvConfig cfg;
        cfg.max_turns = max_turns;
        Rig rig(with_env({}), cfg);
        auto s = rig.open();
        ScriptedAgent agent({AgentMessage::text("Could you tell me more?"), tool_msg("T0", {{"q", "x"}})});
        auto t = run_episode(rig.env, s, agent, "t");
        CHECK(t.terminated == TerminationReason::TurnLimit);
        CHECK(s.turns_used == max_turns);
        CHECK(s.status == SessionStatus::TurnLimit);
    }
    CHECK(EnvConfig{}.max_turns == 16);
}

TEST_CASE("simulator outage ends the session with reason error") {
    Rig rig(std::vector<json>{});
    auto s = rig.open();
    auto r = rig.env.step(s, tool_msg("T0", {{"q", "x"}}));
    CHECK(r.kind == ReplyKind::Terminal);
    CHECK(r.reason == TerminationReason::Error);
    CHECK(s.status == SessionStatus::Error);
}

TEST_CASE("oversized agent messages are truncated") {
    EnvConfig cfg;
    cfg.max_message_tokens = 10;
    Rig rig(with_env({}), cfg);
    auto s = rig.open();
    rig.env.step(s, AgentMessage::text(std::string(100, 'a') + "?"));
    CHECK(s.transcript[2].content.size() == 40);
}

TEST_CASE("map scopes: groups share, fresh scopes are private, persistence spans groups") {
    {
        Rig rig(with_env({}));
        auto a = rig.open("g");
        auto b = rig.open("g");
        auto c = rig.open("h");
        auto d = rig.open("");
        auto e = rig.open("");
        CHECK(a.map == b.map);
        CHECK(a.map != c.map);
        CHECK(d.map != e.map);
        rig.env.step(a, tool_msg("T0", {{"q", "x"}}));
        CHECK(rig.env.step(b, tool_msg("T0", {{"q", "x"}})).map_hit);
        CHECK_FALSE(rig.env.step(c, tool_msg("T0", {{"q", "x"}})).map_hit);
    }
    {
        Rig rig(with_env({}), {}, true);
        CHECK(rig.open("g").map == rig.open("h").map);
    }
}

TEST_CASE("consistency map: concurrent commits keep one entry per canonical call") {
    ConsistencyMap map("t");
    std::vector<std::thread> threads;
    for (int w = 0; w < 8; ++w)
        threads.emplace_back([&, w] {
            for (int i = 0; i < 50; ++i) {
                auto call = canonicalize_call("T", json{{"i", i}});
                auto c = map.commit(call, "r" + std::to_string(i) + "/w" + std::to_string(w));
                CHECK(c.outcome != ConsistencyMap::Outcome::Stale);
            }
        });
    for (auto& t : threads) t.join();
    CHECK(map.size() == 50);
    std::set<std::string> keys;
    for (const auto& e : map.snapshot()) keys.insert(e.call.key());
    CHECK(keys.size() == 50);

    auto call = canonicalize_call("T", json{{"i", 999}});
    CHECK(map.commit(call, "late", std::size_t{3}).outcome == ConsistencyMap::Outcome::Stale);
    CHECK(map.commit(call, "now", std::size_t{50}).outcome == ConsistencyMap::Outcome::Appended);
    auto again = map.commit(call, "other");
    CHECK(again.outcome == ConsistencyMap::Outcome::Existing);
    CHECK(again.response == "now");
}

TEST_CASE("concurrent sessions in one group agree on every response") {
    Rig rig(with_env({}));
    constexpr int kSessions = 6;
    std::vector<std::vector<std::string>> seen(kSessions);
    std::vector<std::thread> threads;
    for (int k = 0; k < kSessions; ++k)
        threads.emplace_back([&, k] {
            auto s = rig.open("shared");
            for (int i = 0; i < 10; ++i)
                seen[k].push_back(rig.env.step(s, tool_msg("T0", {{"q", "c" + std::to_string((i + k) % 10)}})).content);
        });
    for (auto& t : threads) t.join();
    auto map = rig.env.maps().attach(rig.task->task_id, MapScope::shared("shared"));
    CHECK(map->size() == 10);
    for (int k = 0; k < kSessions; ++k)
        for (int i = 0; i < 10; ++i)
            CHECK(seen[k][i] == *map->lookup(canonicalize_call("T0", {{"q", "c" + std::to_string((i + k) % 10)}})));
}

TEST_CASE("run_group shares one map across sequential rollouts") {
    Rig rig(with_env({}));
    auto factory = [] {
        return std::make_unique<ScriptedAgent>(std::vector<AgentMessage>{
            tool_msg("T0", {{"q", "a"}}), tool_msg("T1", {{"q", "b"}}), AgentMessage::text("<answer>ok</answer>")});
    };
    auto trajectories = run_group(rig.env, rig.task, "grp", 3, factory);
    REQUIRE(trajectories.size() == 3);
    CHECK(trajectories[0].id == rig.task->task_id + "/grp/0");
    for (const auto& t : trajectories) {
        CHECK(t.terminated == TerminationReason::Answered);
        CHECK(t.messages[3].content == trajectories[0].messages[3].content);
    }
    CHECK(rig.env.maps().attach(rig.task->task_id, MapScope::shared("grp"))->size() == 2);
}

TEST_CASE("agent message wire form") {
    auto m = agent_message_from_json(json::parse(R"({"tool_call": {"name": "T0", "arguments": "{\"q\": \"x\"}"}})"));
    REQUIRE(m.tool_call.has_value());
    CHECK(m.tool_call->arguments_valid);
    CHECK(m.tool_call->arguments == json{{"q", "x"}});
    CHECK(agent_message_from_json("plain").content == "plain");
    auto round = agent_message_from_json(to_json(AgentMessage::call("T1", {{"q", 1}})));
    CHECK(round.tool_call->name == "T1");
    auto llm = AgentMessage::from_chat_response({R"({"name": "T0", "arguments": {}})", FinishReason::ToolCall, 0});
    CHECK(llm.tool_call->name == "T0");
}

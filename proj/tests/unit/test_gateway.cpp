#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

#include <unistd.h>

#include <httplib.h>

#include "agentforge/gateway.hpp"
#include "test_support.hpp"

using namespace agentforge;
using testsupport::rule;

namespace {

ChatRequest ask(const std::string& text) {
    ChatRequest r;
    r.model_tag = "m";
    r.messages.push_back({Role::User, text, std::nullopt, 0});
    return r;
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "agentforge_tests";
    std::filesystem::create_directories(dir);
    auto p = dir / (name + "_" + std::to_string(::getpid()));
    std::filesystem::remove(p);
    return p;
}

}  // namespace

TEST_CASE("stub: first matching rule wins, sequence repeats its last reply") {
    auto stub = testsupport::make_stub({rule({"hello"}, {"one", "two"}), rule({"h"}, {"fallback"})});
    CHECK(stub->send(ask("hello")).content == "one");
    CHECK(stub->send(ask("hello")).content == "two");
    CHECK(stub->send(ask("hello")).content == "two");
    CHECK(stub->send(ask("hi")).content == "fallback");
    CHECK_THROWS_AS(stub->send(ask("zzz")), ScriptExhausted);
    CHECK(stub->calls() == 5);
}

TEST_CASE("stub: exhaust, cycle, not-patterns and substitution") {
    auto exhaust = rule({"x"}, {"a"});
    exhaust["exhaust"] = true;
    auto negated = rule({"y"}, {"no-z"});
    negated["not"] = "z";
    auto subst = rule({R"(name=(\w+))"}, {"hello $1"});
    subst["substitute"] = true;
    auto stub = testsupport::make_stub({exhaust, rule({"x"}, {"b"}), rule({"c"}, {"1", "2"}, "cycle"), negated,
                                        rule({"y"}, {"with-z"}), subst});
    CHECK(stub->send(ask("x")).content == "a");
    CHECK(stub->send(ask("x")).content == "b");
    CHECK(stub->send(ask("c")).content == "1");
    CHECK(stub->send(ask("c")).content == "2");
    CHECK(stub->send(ask("c")).content == "1");
    CHECK(stub->send(ask("y")).content == "no-z");
    CHECK(stub->send(ask("yz")).content == "with-z");
    CHECK(stub->send(ask("name=ada")).content == "hello ada");
}

TEST_CASE("stub: random mode depends only on the request and its occurrence") {
    auto make = [] {
        auto r = rule({"."}, {"a", "b", "c", "d", "e"}, "random");
        r["seed"] = 11;
        return testsupport::make_stub({r});
    };
    auto s1 = make();
    auto s2 = make();
    std::vector<std::string> first;
    for (int i = 0; i < 20; ++i) first.push_back(s1->send(ask("q" + std::to_string(i % 4))).content);
    // Interleave differently: the per-request sequence must not change.
    std::map<int, std::vector<std::string>> by_request;
    for (int k = 3; k >= 0; --k)
        for (int i = 0; i < 5; ++i) by_request[k].push_back(s2->send(ask("q" + std::to_string(k))).content);
    std::map<int, std::size_t> seen;
    for (int i = 0; i < 20; ++i) CHECK(first[i] == by_request[i % 4][seen[i % 4]++]);
    std::set<std::string> distinct(first.begin(), first.end());
    CHECK(distinct.size() > 1);
}

TEST_CASE("stub: tool-call replies and scripted usage") {
    json script{{"rules",
                 {{{"pattern", "go"},
                   {"reply", {{"tool_call", {{"name", "T0"}, {"arguments", {{"q", "x"}}}}}, {"usage_tokens", 7}}}}}}};
    auto stub = StubBackend::from_json(script);
    auto r = stub->send(ask("go"));
    CHECK(r.finish_reason == FinishReason::ToolCall);
    CHECK(json::parse(r.content)["name"] == "T0");
    CHECK(r.usage_tokens == 7);
}

TEST_CASE("gateway: retries transport failures with backoff, then gives up") {
    json fail{{"fail", true}};
    auto stub = testsupport::make_stub({rule({"flaky"}, {fail, fail, "ok"}), rule({"dead"}, {fail})});
    Gateway gw(stub, testsupport::fast_options());
    CHECK(gw.complete(ask("flaky")).content == "ok");
    CHECK(gw.retries() == 2);
    CHECK_THROWS_AS(gw.complete(ask("dead")), TransportError);
    CHECK(gw.retries() == 5);
    CHECK(gw.requests() == 7);
    CHECK(gw.tokens_used() > 0);
    CHECK_THROWS_AS(gw.complete(ChatRequest{}), std::invalid_argument);
}

TEST_CASE("gateway: backoff schedule") {
    RetryPolicy p;
    CHECK(p.backoff_for(0).count() == 500);
    CHECK(p.backoff_for(1).count() == 1000);
    CHECK(p.backoff_for(2).count() == 2000);
    p.max_backoff = std::chrono::milliseconds(1500);
    CHECK(p.backoff_for(5).count() == 1500);
}

namespace {

class SlowBackend : public Backend {
public:
    ChatResponse send(const ChatRequest&) override {
        int now = ++in_flight;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {}
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        --in_flight;
        return {"ok", FinishReason::Stop, 1};
    }
    std::string name() const override { return "slow"; }
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
};

}  // namespace

TEST_CASE("gateway: in-flight cap") {
    auto backend = std::make_shared<SlowBackend>();
    Gateway gw(backend, testsupport::fast_options(2));
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&] { gw.complete(ask("x")); });
    for (auto& t : threads) t.join();
    CHECK(backend->peak.load() <= 2);
    CHECK(gw.tokens_used() == 8);
}

TEST_CASE("cassette: record then replay in order") {
    auto path = temp_file("cassette.jsonl");
    {
        auto inner = testsupport::make_stub({rule({"a"}, {"first", "second"}), rule({"b"}, {"bee"})});
        CassetteBackend rec(path, CassetteBackend::Mode::Record, inner);
        CHECK(rec.send(ask("a")).content == "first");
        CHECK(rec.send(ask("b")).content == "bee");
        CHECK(rec.send(ask("a")).content == "second");
    }
    CassetteBackend replay(path, CassetteBackend::Mode::Replay);
    CHECK(replay.send(ask("a")).content == "first");
    CHECK(replay.send(ask("a")).content == "second");
    CHECK(replay.send(ask("b")).content == "bee");
    CHECK_THROWS_AS(replay.send(ask("a")), CassetteMiss);
    CHECK_THROWS_AS(replay.send(ask("c")), CassetteMiss);
}

TEST_CASE("remote: wire body and response parsing") {
    ChatRequest req = ask("hi");
    auto call = canonicalize_call("T0", json{{"q", "x"}});
    req.messages.push_back({Role::ToolCall, "c", call, 1});
    req.messages.push_back({Role::ToolResponse, "r", std::nullopt, 2});
    req.tools = std::vector<ToolSpec>{testsupport::tiny_task(1).toolset};
    auto body = RemoteBackend::request_body(req);
    CHECK(body["model"] == "m");
    CHECK(body["messages"][1]["tool_calls"][0]["function"]["name"] == "T0");
    CHECK(body["messages"][1]["tool_calls"][0]["function"]["arguments"] == R"({"q":"x"})");
    CHECK(body["messages"][2]["role"] == "tool");
    CHECK(body["messages"][2]["tool_call_id"] == body["messages"][1]["tool_calls"][0]["id"]);
    CHECK(body["tools"][0]["function"]["name"] == "T0");

    auto text = RemoteBackend::parse_response(json::parse(
        R"({"choices": [{"message": {"content": "hey"}, "finish_reason": "length"}], "usage": {"total_tokens": 12}})"));
    CHECK(text == ChatResponse{"hey", FinishReason::Length, 12});
    auto tool = RemoteBackend::parse_response(json::parse(
        R"({"choices": [{"message": {"content": null, "tool_calls": [{"function": {"name": "T0", "arguments": "{\"q\": 1}"}}]}}]})"));
    CHECK(tool.finish_reason == FinishReason::ToolCall);
    CHECK(json::parse(tool.content) == json{{"name", "T0"}, {"arguments", {{"q", 1}}}});
}

TEST_CASE("remote: 503 is retried, 400 is not") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body);
        const auto text = body["messages"][0]["content"].get<std::string>();
        if (text == "bad") {
            res.status = 400;
            res.set_content(R"({"error": "nope"})", "application/json");
            return;
        }
        if (++hits <= 2) {
            res.status = 503;
            return;
        }
        res.set_content(R"({"choices": [{"message": {"content": "pong"}}], "usage": {"total_tokens": 3}})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteOptions opts;
    opts.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
    opts.timeout = std::chrono::seconds(5);
    Gateway gw(std::make_shared<RemoteBackend>(opts), testsupport::fast_options());
    auto r = gw.complete(ask("ping"));
    CHECK(r.content == "pong");
    CHECK(gw.retries() == 2);
    CHECK(gw.tokens_used() == 3);

    CHECK_THROWS_AS(gw.complete(ask("bad")), GatewayError);
    CHECK(gw.retries() == 2);

    server.stop();
    th.join();

    RemoteOptions closed = opts;
    closed.base_url = "http://127.0.0.1:1/v1";
    Gateway down(std::make_shared<RemoteBackend>(closed), testsupport::fast_options());
    CHECK_THROWS_AS(down.complete(ask("ping")), TransportError);
    CHECK(down.retries() == 3);
}

TEST_CASE("make_backend from config") {
    Config cfg;
    CHECK_THROWS_AS(make_backend(cfg), std::invalid_argument);  // stub without script
    cfg.set("backend", "carrier-pigeon");
    CHECK_THROWS_AS(make_backend(cfg), std::invalid_argument);
    cfg.set("backend", "remote");
    CHECK(make_backend(cfg)->name() == "remote");
    cfg.set("gateway.max_retries", "1");
    cfg.set("gateway.backoff_ms", "0");
    auto o = gateway_options_from_config(cfg);
    CHECK(o.retry.max_retries == 1);
    CHECK(o.retry.initial_backoff.count() == 0);
}

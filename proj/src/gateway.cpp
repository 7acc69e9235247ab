#include "agentforge/gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "agentforge/serialize.hpp"
#include "agentforge/text.hpp"

namespace agentforge {

std::string_view to_string(FinishReason r) noexcept {
    switch (r) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::ToolCall: return "tool_call";
    }
    return "stop";
}

FinishReason finish_reason_from_string(std::string_view s) {
    if (s == "stop") return FinishReason::Stop;
    if (s == "length") return FinishReason::Length;
    if (s == "tool_call" || s == "tool_calls" || s == "function_call") return FinishReason::ToolCall;
    throw std::invalid_argument("unknown finish_reason '" + std::string(s) + "'");
}

json ChatRequest::to_json() const {
    json j{{"model", model_tag}, {"messages", messages}, {"max_tokens", max_tokens}, {"temperature", temperature}};
    if (tools) j["tools"] = *tools;
    return j;
}

json to_json(const ChatResponse& r) {
    return json{{"content", r.content},
                {"finish_reason", std::string(to_string(r.finish_reason))},
                {"usage_tokens", r.usage_tokens}};
}

ChatResponse chat_response_from_json(const json& j) {
    ChatResponse r;
    r.content = j.at("content").get<std::string>();
    r.finish_reason = finish_reason_from_string(j.value("finish_reason", std::string("stop")));
    r.usage_tokens = j.value("usage_tokens", std::int64_t{0});
    return r;
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

std::chrono::milliseconds RetryPolicy::backoff_for(int attempt) const {
    double ms = static_cast<double>(initial_backoff.count());
    for (int i = 0; i < attempt; ++i) ms *= multiplier;
    return std::min(max_backoff, std::chrono::milliseconds(static_cast<long long>(ms)));
}

class Gateway::Slot {
public:
    explicit Slot(Gateway& gw) : gw_(gw) {
        std::unique_lock lock(gw_.mu_);
        gw_.cv_.wait(lock, [&] { return gw_.in_flight_ < std::max<std::size_t>(1, gw_.options_.max_concurrency); });
        ++gw_.in_flight_;
    }
    ~Slot() {
        {
            std::lock_guard lock(gw_.mu_);
            --gw_.in_flight_;
        }
        gw_.cv_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

private:
    Gateway& gw_;
};

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(options) {
    if (!backend_) throw std::invalid_argument("gateway requires a backend");
}

ChatResponse Gateway::complete(const ChatRequest& request) {
    if (request.messages.empty()) throw std::invalid_argument("chat request has no messages");
    Slot slot(*this);
    for (int attempt = 0;; ++attempt) {
        try {
            ++requests_;
            ChatResponse response = backend_->send(request);
            tokens_ += std::max<std::int64_t>(0, response.usage_tokens);
            return response;
        } catch (const TransportError& e) {
            if (attempt >= options_.retry.max_retries) {
                spdlog::error("chat completion failed after {} attempts: {}", attempt + 1, e.what());
                throw;
            }
            ++retries_;
            auto wait = options_.retry.backoff_for(attempt);
            spdlog::warn("chat completion attempt {} failed ({}); retry {} of {} in {} ms", attempt + 1,
                         e.what(), attempt + 1, options_.retry.max_retries, wait.count());
            std::this_thread::sleep_for(wait);
        }
    }
}

// ---------------------------------------------------------------------------
// Stub
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<std::string> string_or_list(const json& j) {
    if (j.is_null()) return {};
    if (j.is_string()) return {j.get<std::string>()};
    return j.get<std::vector<std::string>>();
}

StubReply reply_from_json(const json& j) {
    StubReply r;
    if (j.is_string()) {
        r.content = j.get<std::string>();
        return r;
    }
    r.content = j.value("content", std::string());
    r.finish_reason = finish_reason_from_string(j.value("finish_reason", std::string("stop")));
    if (j.contains("usage_tokens")) r.usage_tokens = j.at("usage_tokens").get<std::int64_t>();
    r.transport_failure = j.value("fail", false);
    if (j.contains("tool_call")) {
        r.content = j.at("tool_call").dump();
        r.finish_reason = FinishReason::ToolCall;
    }
    return r;
}

}  // namespace

StubBackend::StubBackend(std::vector<StubRule> rules) {
    for (auto& rule : rules) {
        CompiledRule c;
        for (const auto& p : rule.patterns) c.patterns.emplace_back(p);
        for (const auto& p : rule.not_patterns) c.not_patterns.emplace_back(p);
        if (rule.replies.empty()) throw std::invalid_argument("stub rule without replies");
        c.rule = std::move(rule);
        rules_.push_back(std::move(c));
    }
}

std::shared_ptr<StubBackend> StubBackend::from_json(const json& script) {
    std::vector<StubRule> rules;
    for (const auto& r : script.at("rules")) {
        StubRule rule;
        rule.patterns = string_or_list(r.contains("pattern") ? r.at("pattern") : json());
        rule.not_patterns = string_or_list(r.contains("not") ? r.at("not") : json());
        if (r.contains("reply")) rule.replies.push_back(reply_from_json(r.at("reply")));
        if (r.contains("replies"))
            for (const auto& rep : r.at("replies")) rule.replies.push_back(reply_from_json(rep));
        auto mode = r.value("mode", std::string("sequence"));
        if (mode == "sequence") rule.mode = StubMode::Sequence;
        else if (mode == "cycle") rule.mode = StubMode::Cycle;
        else if (mode == "random") rule.mode = StubMode::Random;
        else throw std::invalid_argument("unknown stub mode '" + mode + "'");
        rule.exhaust = r.value("exhaust", false);
        rule.substitute = r.value("substitute", false);
        rule.seed = r.value("seed", std::uint64_t{0});
        rules.push_back(std::move(rule));
    }
    auto stub = std::make_shared<StubBackend>(std::move(rules));
    stub->set_latency(std::chrono::milliseconds(script.value("latency_ms", 0)));
    return stub;
}

std::shared_ptr<StubBackend> StubBackend::from_file(const std::filesystem::path& path) {
    return from_json(json::parse(read_text_file(path)));
}

std::int64_t StubBackend::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

ChatResponse StubBackend::send(const ChatRequest& request) {
    const std::string& last = request.messages.back().content;
    StubReply chosen;
    std::smatch captures;
    bool matched = false;
    {
        std::lock_guard lock(mu_);
        ++calls_;
        for (auto& c : rules_) {
            std::smatch m;
            bool ok = true;
            for (std::size_t i = 0; i < c.patterns.size() && ok; ++i) {
                if (i == 0) ok = std::regex_search(last, m, c.patterns[i]);
                else ok = std::regex_search(last, c.patterns[i]);
            }
            for (const auto& np : c.not_patterns)
                if (ok && std::regex_search(last, np)) ok = false;
            if (!ok) continue;

            const auto n = c.rule.replies.size();
            std::size_t index = 0;
            switch (c.rule.mode) {
            case StubMode::Sequence:
                if (c.rule.exhaust && c.next >= n) continue;
                index = std::min(c.next, n - 1);
                ++c.next;
                break;
            case StubMode::Cycle: index = c.next++ % n; break;
            case StubMode::Random: {
                const auto h = fnv1a64(last);
                const auto occurrence = c.occurrences[h]++;
                index = static_cast<std::size_t>(
                    splitmix64(c.rule.seed ^ splitmix64(h) ^ splitmix64(occurrence + 1)) % n);
                break;
            }
            }
            chosen = c.rule.replies[index];
            if (c.rule.substitute) captures = m;
            matched = true;
            break;
        }
    }
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    if (!matched) {
        auto preview = last.substr(0, 120);
        throw ScriptExhausted("no stub rule matches request: " + preview);
    }
    if (chosen.transport_failure) throw TransportError("scripted transport failure");

    ChatResponse out;
    out.content = captures.empty() ? chosen.content : captures.format(chosen.content);
    out.finish_reason = chosen.finish_reason;
    if (chosen.usage_tokens) {
        out.usage_tokens = *chosen.usage_tokens;
    } else {
        long prompt = 0;
        for (const auto& m : request.messages) prompt += estimate_tokens(m.content);
        out.usage_tokens = prompt + estimate_tokens(out.content);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cassette
// ---------------------------------------------------------------------------

std::string request_fingerprint(const ChatRequest& request) {
    return hex16(fnv1a64(request.to_json().dump()));
}

CassetteBackend::CassetteBackend(std::filesystem::path path, Mode mode, std::shared_ptr<Backend> inner)
    : path_(std::move(path)), mode_(mode), inner_(std::move(inner)) {
    if (mode_ == Mode::Record) {
        if (!inner_) throw std::invalid_argument("record mode requires an inner backend");
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        return;
    }
    std::istringstream in(read_text_file(path_));
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            recorded_[j.at("key").get<std::string>()].push_back(chat_response_from_json(j.at("response")));
        } catch (const std::exception& e) {
            throw ParseError(number, e.what());
        }
    }
}

ChatResponse CassetteBackend::send(const ChatRequest& request) {
    const auto key = request_fingerprint(request);
    if (mode_ == Mode::Replay) {
        std::lock_guard lock(mu_);
        auto it = recorded_.find(key);
        if (it == recorded_.end() || it->second.empty())
            throw CassetteMiss("no recorded response for request " + key);
        ChatResponse r = it->second.front();
        it->second.pop_front();
        return r;
    }
    ChatResponse r = inner_->send(request);
    json entry{{"key", key}, {"request", request.to_json()}, {"response", to_json(r)}};
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw GatewayError("cannot append to cassette '" + path_.string() + "'");
    out << entry.dump() << '\n';
    return r;
}

// ---------------------------------------------------------------------------
// Remote
// ---------------------------------------------------------------------------

RemoteBackend::RemoteBackend(RemoteOptions options) : options_(std::move(options)) {
    const auto& url = options_.base_url;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("base URL needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

json RemoteBackend::request_body(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        switch (m.role) {
        case Role::System: messages.push_back({{"role", "system"}, {"content", m.content}}); break;
        case Role::User: messages.push_back({{"role", "user"}, {"content", m.content}}); break;
        case Role::Assistant: messages.push_back({{"role", "assistant"}, {"content", m.content}}); break;
        case Role::ToolCall: {
            json call{{"id", "call_" + std::to_string(m.turn)},
                      {"type", "function"},
                      {"function", {{"name", m.call->tool}, {"arguments", m.call->args.dump()}}}};
            messages.push_back({{"role", "assistant"}, {"content", nullptr}, {"tool_calls", json::array({call})}});
            break;
        }
        case Role::ToolResponse:
            messages.push_back(
                {{"role", "tool"}, {"tool_call_id", "call_" + std::to_string(m.turn - 1)}, {"content", m.content}});
            break;
        }
    }
    json body{{"model", request.model_tag},
              {"messages", messages},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens}};
    if (request.tools && !request.tools->empty()) {
        json tools = json::array();
        for (const auto& t : *request.tools) tools.push_back({{"type", "function"}, {"function", t}});
        body["tools"] = tools;
    }
    return body;
}

ChatResponse RemoteBackend::parse_response(const json& body) {
    const auto& choice = body.at("choices").at(0);
    const auto& message = choice.at("message");
    ChatResponse r;
    if (auto calls = message.find("tool_calls"); calls != message.end() && calls->is_array() && !calls->empty()) {
        const auto& fn = calls->at(0).at("function");
        json args = fn.at("arguments");
        if (args.is_string()) {
            try {
                args = json::parse(args.get<std::string>());
            } catch (const json::exception&) {
                // Leave the raw text; the environment reports it as malformed.
            }
        }
        r.content = json{{"name", fn.at("name")}, {"arguments", args}}.dump();
        r.finish_reason = FinishReason::ToolCall;
    } else {
        const auto& content = message.at("content");
        r.content = content.is_null() ? "" : content.get<std::string>();
        auto fr = choice.value("finish_reason", std::string("stop"));
        r.finish_reason = fr == "length" ? FinishReason::Length : FinishReason::Stop;
    }
    if (auto usage = body.find("usage"); usage != body.end())
        r.usage_tokens = usage->value("total_tokens", std::int64_t{0});
    return r;
}

ChatResponse RemoteBackend::send(const ChatRequest& request) {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    client.set_write_timeout(options_.timeout);
    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

    auto res = client.Post(path_prefix_ + "/chat/completions", headers, request_body(request).dump(),
                           "application/json");
    if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    if (res->status != 200)
        throw GatewayError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    try {
        return parse_response(json::parse(res->body));
    } catch (const json::exception& e) {
        throw GatewayError(std::string("malformed completion body: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

ModelRoles ModelRoles::from_config(const Config& cfg) {
    ModelRoles r;
    r.synthesizer = cfg.get_string("model.synthesizer", r.synthesizer);
    r.simulator = cfg.get_string("model.simulator", r.simulator);
    r.judge = cfg.get_string("model.judge", r.judge);
    r.teacher = cfg.get_string("model.teacher", r.teacher);
    r.agent = cfg.get_string("model.agent", r.agent);
    return r;
}

GatewayOptions gateway_options_from_config(const Config& cfg) {
    GatewayOptions o;
    o.retry.max_retries = static_cast<int>(cfg.get_int("gateway.max_retries", o.retry.max_retries));
    o.retry.initial_backoff = std::chrono::milliseconds(cfg.get_int("gateway.backoff_ms", 500));
    o.max_concurrency = static_cast<std::size_t>(cfg.get_int("gateway.max_concurrency", 8));
    return o;
}

std::shared_ptr<Backend> make_backend(const Config& cfg) {
    const auto kind = cfg.get_string("backend", "stub");
    auto remote = [&] {
        RemoteOptions o;
        o.base_url = cfg.get_string("remote.base_url", o.base_url);
        if (const char* key = std::getenv(cfg.get_string("remote.api_key_env", "OPENAI_API_KEY").c_str()))
            o.api_key = key;
        o.timeout = std::chrono::seconds(cfg.get_int("remote.timeout_s", 120));
        return std::make_shared<RemoteBackend>(o);
    };
    if (kind == "stub") {
        auto script = cfg.get("stub.script");
        if (!script) throw std::invalid_argument("backend 'stub' requires stub.script");
        return StubBackend::from_file(*script);
    }
    if (kind == "remote") return remote();
    if (kind == "record" || kind == "replay") {
        auto path = cfg.get("cassette.path");
        if (!path) throw std::invalid_argument("backend '" + kind + "' requires cassette.path");
        if (kind == "replay") return std::make_shared<CassetteBackend>(*path, CassetteBackend::Mode::Replay);
        std::shared_ptr<Backend> inner;
        if (auto script = cfg.get("stub.script")) inner = StubBackend::from_file(*script);
        else inner = remote();
        return std::make_shared<CassetteBackend>(*path, CassetteBackend::Mode::Record, inner);
    }
    throw std::invalid_argument("unknown backend '" + kind + "'");
}

}  // namespace agentforge

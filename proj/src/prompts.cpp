#include "agentforge/prompts.hpp"

#include <mutex>
#include <stdexcept>

#include "agentforge/serialize.hpp"

namespace agentforge {

namespace {

constexpr std::string_view kUserMarker = "=== user ===";

struct Registry {
    std::mutex mu;
    std::map<std::string, PromptTemplate, std::less<>> templates;

    Registry() {
        for (const auto& [name, text] : builtin_prompt_files()) templates[name] = parse_prompt_file(text);
    }
};

Registry& registry() {
    static Registry r;
    return r;
}

std::string strip_edges(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    std::size_t start = 0;
    while (start < s.size() && (s[start] == '\n' || s[start] == '\r')) ++start;
    return s.substr(start);
}

}  // namespace

PromptTemplate parse_prompt_file(std::string_view text) {
    auto pos = text.find(kUserMarker);
    if (pos == std::string_view::npos) return {strip_edges(std::string(text)), {}};
    return {strip_edges(std::string(text.substr(0, pos))),
            strip_edges(std::string(text.substr(pos + kUserMarker.size())))};
}

const PromptTemplate& prompt(std::string_view name) {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    auto it = r.templates.find(name);
    if (it == r.templates.end()) throw std::out_of_range("unknown prompt template '" + std::string(name) + "'");
    return it->second;
}

void load_prompt_overrides(const std::filesystem::path& dir) {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".txt") continue;
        r.templates[entry.path().stem().string()] = parse_prompt_file(read_text_file(entry.path()));
    }
}

}  // namespace agentforge

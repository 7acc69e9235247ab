#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace agentforge {

struct PromptTemplate {
    std::string system;
    std::string user;
};

/// Splits a template file at the `=== user ===` line.
PromptTemplate parse_prompt_file(std::string_view text);

/// Named template (`workflow`, `toolset`, `tool_simulator`, ...). Templates
/// ship with the engine; files in the override directory take precedence.
const PromptTemplate& prompt(std::string_view name);

/// Replaces built-in templates with any `<name>.txt` found in `dir`.
void load_prompt_overrides(const std::filesystem::path& dir);

/// Generated at build time from prompts/*.txt.
const std::map<std::string, std::string>& builtin_prompt_files();

}  // namespace agentforge

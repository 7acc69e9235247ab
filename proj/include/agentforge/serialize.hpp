#pragma once

#include <filesystem>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "agentforge/schema.hpp"

namespace agentforge {

void to_json(json& j, const PersonaRecord& v);
void from_json(const json& j, PersonaRecord& v);
void to_json(json& j, const WorkflowStep& v);
void from_json(const json& j, WorkflowStep& v);
/// Function-calling layout: {name, description, parameters: {type, properties, required}}.
void to_json(json& j, const ToolSpec& v);
void from_json(const json& j, ToolSpec& v);
void to_json(json& j, const ForbiddenConstraint& v);
void from_json(const json& j, ForbiddenConstraint& v);
void to_json(json& j, const CanonicalCall& v);
void from_json(const json& j, CanonicalCall& v);
void to_json(json& j, const Message& v);
void from_json(const json& j, Message& v);
void to_json(json& j, const SynthTask& v);
void from_json(const json& j, SynthTask& v);
void to_json(json& j, const Trajectory& v);
void from_json(const json& j, Trajectory& v);
void to_json(json& j, const Rubric& v);
void from_json(const json& j, Rubric& v);
void to_json(json& j, const Fraction& v);
void from_json(const json& j, Fraction& v);
void to_json(json& j, const RewardReport& v);
void from_json(const json& j, RewardReport& v);

/// One record per line.
template <typename T>
std::string serialize(const T& value) {
    return json(value).dump();
}

template <typename T>
T deserialize(std::string_view line) {
    return json::parse(line).get<T>();
}

template <typename T>
std::string serialize_lines(const std::vector<T>& values) {
    std::string out;
    for (const auto& v : values) {
        out += serialize(v);
        out += '\n';
    }
    return out;
}

struct LineError {
    std::size_t line = 0;
    std::string message;
};

/// Reads records; blank lines are skipped. In strict mode the first bad line
/// throws ParseError; in lenient mode bad lines are collected in `errors`.
template <typename T>
std::vector<T> read_records(std::istream& in, std::vector<LineError>* errors = nullptr) {
    std::vector<T> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line).get<T>());
        } catch (const std::exception& e) {
            if (errors == nullptr) throw ParseError(number, e.what());
            errors->push_back({number, e.what()});
        }
    }
    return out;
}

template <typename T>
std::vector<T> deserialize_lines(const std::string& text) {
    std::istringstream in(text);
    return read_records<T>(in);
}

std::string read_text_file(const std::filesystem::path& path);

/// Writes via a temp file in the same directory and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

template <typename T>
std::vector<T> load_records(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    return read_records<T>(in);
}

}  // namespace agentforge

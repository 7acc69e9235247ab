#include "agentforge/stats.hpp"

#include <fmt/format.h>

#include "agentforge/serialize.hpp"

namespace agentforge {

json to_json(const CorpusStats& s) {
    return json{{"total_tasks", s.total_tasks},       {"avg_tools_per_task", s.avg_tools_per_task},
                {"trajectories", s.trajectories},     {"avg_interactions", s.avg_interactions},
                {"maps", s.maps},                     {"avg_mapping_size", s.avg_mapping_size},
                {"total_tokens", s.total_tokens},     {"tokens_per_task", s.tokens_per_task}};
}

std::int64_t count_interactions(const Trajectory& t) {
    std::int64_t n = 0;
    bool seen_instruction = false;
    for (const auto& m : t.messages) {
        if (m.role == Role::ToolResponse) ++n;
        if (m.role == Role::User) {
            if (seen_instruction) ++n;
            seen_instruction = true;
        }
    }
    return n;
}

namespace {

double ratio(double num, std::int64_t den) { return den == 0 ? 0.0 : num / static_cast<double>(den); }

}  // namespace

CorpusStats compute_stats(const CorpusInputs& in) {
    CorpusStats s;
    s.total_tasks = static_cast<std::int64_t>(in.tasks.size());
    std::int64_t tools = 0;
    for (const auto& t : in.tasks) tools += static_cast<std::int64_t>(t.toolset.size());
    s.avg_tools_per_task = ratio(static_cast<double>(tools), s.total_tasks);

    s.trajectories = static_cast<std::int64_t>(in.trajectories.size());
    std::int64_t interactions = 0;
    for (const auto& t : in.trajectories) interactions += count_interactions(t);
    s.avg_interactions = ratio(static_cast<double>(interactions), s.trajectories);

    s.maps = static_cast<std::int64_t>(in.map_sizes.size());
    std::int64_t entries = 0;
    for (auto m : in.map_sizes) entries += static_cast<std::int64_t>(m);
    s.avg_mapping_size = ratio(static_cast<double>(entries), s.maps);

    s.total_tokens = in.total_tokens;
    s.tokens_per_task = ratio(static_cast<double>(in.total_tokens), s.total_tasks);
    return s;
}

CorpusInputs load_corpus(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    CorpusInputs in;
    if (fs::exists(dir / "tasks.jsonl")) in.tasks = load_records<SynthTask>(dir / "tasks.jsonl");
    if (fs::exists(dir / "trajectories.jsonl")) in.trajectories = load_records<Trajectory>(dir / "trajectories.jsonl");
    if (fs::exists(dir / "maps.jsonl"))
        for (const auto& m : load_records<json>(dir / "maps.jsonl"))
            in.map_sizes.push_back(m.contains("entries") ? m.at("entries").size() : m.value("size", 0));
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("usage", 0) != 0 || entry.path().extension() != ".json") continue;
        auto j = json::parse(read_text_file(entry.path()));
        in.total_tokens += j.value("total_tokens", std::int64_t{0});
    }
    return in;
}

std::string format_stats(const CorpusStats& s) {
    std::string out;
    out += fmt::format("{:<28}{:>14}\n", "Total tasks", s.total_tasks);
    out += fmt::format("{:<28}{:>14.2f}\n", "Avg. tools per task", s.avg_tools_per_task);
    out += fmt::format("{:<28}{:>14.2f}\n", "Avg. interactions", s.avg_interactions);
    out += fmt::format("{:<28}{:>14.2f}\n", "Avg. mapping size", s.avg_mapping_size);
    out += fmt::format("{:<28}{:>14}\n", "Total tokens", s.total_tokens);
    out += fmt::format("{:<28}{:>14.1f}\n", "Tokens per task", s.tokens_per_task);
    return out;
}

}  // namespace agentforge

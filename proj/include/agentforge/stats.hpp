#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agentforge/schema.hpp"

namespace agentforge {

/// Corpus summary in the shape of the usual dataset statistics table.
struct CorpusStats {
    std::int64_t total_tasks = 0;
    double avg_tools_per_task = 0.0;
    std::int64_t trajectories = 0;
    double avg_interactions = 0.0;  // per trajectory
    std::int64_t maps = 0;
    double avg_mapping_size = 0.0;  // entries per (task, scope) map
    std::int64_t total_tokens = 0;
    double tokens_per_task = 0.0;

    bool operator==(const CorpusStats&) const = default;
};

json to_json(const CorpusStats& s);

struct CorpusInputs {
    std::vector<SynthTask> tasks;
    std::vector<Trajectory> trajectories;
    std::vector<std::size_t> map_sizes;
    std::int64_t total_tokens = 0;
};

/// Environment replies (tool responses and simulated user replies) in a
/// trajectory; the opening instruction is not counted.
std::int64_t count_interactions(const Trajectory& t);

CorpusStats compute_stats(const CorpusInputs& in);

/// Reads tasks.jsonl, trajectories.jsonl, maps.jsonl and usage*.json from
/// `dir`; absent files contribute nothing.
CorpusInputs load_corpus(const std::filesystem::path& dir);

/// Fixed-width table for terminals.
std::string format_stats(const CorpusStats& s);

}  // namespace agentforge

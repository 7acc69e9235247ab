#pragma once

#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "agentforge/schema.hpp"

namespace agentforge {

/// Parses one-verdict-per-line judge output of the form `<n> POSITIVE` or
/// `<n> NEGATIVE` (1-based, case-insensitive, optional `.`/`)`/`:` after the
/// number). Entry i is nullopt when item i+1 has no line; the first line for
/// an item wins.
std::vector<std::optional<bool>> parse_item_verdicts(std::string_view text, std::size_t items,
                                                     std::string_view positive, std::string_view negative);

/// Single-token verdict: true for `positive`, false for `negative`, nullopt
/// otherwise. Only the first non-empty line is considered.
std::optional<bool> parse_single_verdict(std::string_view text, std::string_view positive,
                                         std::string_view negative);

/// "1. first\n2. second\n..."
std::string number_items(const std::vector<std::string>& items);

/// One judge or simulator exchange kept for audit.
struct JudgeCall {
    std::string kind;  // forbidden | subgoals | interactions | coverage | reasoning
    int item = -1;     // 0-based constraint index for per-item calls, -1 otherwise
    int attempt = 0;
    std::string prompt;
    std::string response;

    bool operator==(const JudgeCall&) const = default;
};

void to_json(json& j, const JudgeCall& v);
void from_json(const json& j, JudgeCall& v);

/// Thread-safe append-only call log.
class JudgeLog {
public:
    void add(JudgeCall call);
    std::vector<JudgeCall> take();

private:
    std::mutex mu_;
    std::vector<JudgeCall> calls_;
};

}  // namespace agentforge

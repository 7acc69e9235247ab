#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace agentforge {

std::string_view trim(std::string_view s) noexcept;
std::string to_lower(std::string_view s);

/// Lowercase, whitespace runs collapsed to one space, trimmed.
std::string normalize_text(std::string_view s);

/// Sentences split on terminal punctuation or newlines; each normalized with
/// trailing punctuation removed. Empty pieces are dropped.
std::vector<std::string> split_sentences(std::string_view s);

/// First balanced JSON object or array in `s`, skipping prose and code fences.
std::optional<std::string> extract_json_block(std::string_view s);

/// Text between the first `<tag>` and the following `</tag>`.
std::optional<std::string> extract_tag(std::string_view s, std::string_view tag);

/// Numerals in order of appearance, in canonical decimal form
/// ("1,000" -> "1000", "2.50" -> "2.5", "007" -> "7").
std::vector<std::string> extract_numerals(std::string_view s);

/// Canonical decimal form of a numeric literal, or nullopt.
std::optional<std::string> canonical_number(std::string_view s);

/// Answer normal form for exact-match scoring: trimmed, lowercase, collapsed
/// whitespace, surrounding `$`/trailing period removed, numbers canonical.
std::string canonicalize_answer(std::string_view s);

/// Replaces `{{name}}` placeholders. Unknown placeholders are left intact.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

/// Rough token estimate (4 characters per token, rounded up).
long estimate_tokens(std::string_view s) noexcept;

}  // namespace agentforge

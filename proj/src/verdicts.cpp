#include "agentforge/verdicts.hpp"

#include <cctype>
#include <utility>

#include "agentforge/text.hpp"

namespace agentforge {

namespace {

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        out.push_back(trim(text.substr(start, end - start)));
        start = end + 1;
    }
    return out;
}

std::string upper_word(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (!std::isalpha(static_cast<unsigned char>(c)) && c != '_') break;
        out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

}  // namespace

std::vector<std::optional<bool>> parse_item_verdicts(std::string_view text, std::size_t items,
                                                     std::string_view positive, std::string_view negative) {
    std::vector<std::optional<bool>> out(items);
    for (auto line : lines_of(text)) {
        std::size_t i = 0;
        while (i < line.size() && (line[i] == '-' || line[i] == '*' || line[i] == '#')) ++i;
        std::size_t digits = i;
        while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
        if (digits == i || digits - i > 6) continue;
        const auto number = std::stoul(std::string(line.substr(i, digits - i)));
        auto rest = line.substr(digits);
        if (!rest.empty() && (rest[0] == '.' || rest[0] == ')' || rest[0] == ':')) rest.remove_prefix(1);
        if (rest.empty() || !std::isspace(static_cast<unsigned char>(rest[0]))) continue;
        auto word = upper_word(trim(rest));
        std::optional<bool> verdict;
        if (word == positive) verdict = true;
        else if (word == negative) verdict = false;
        if (!verdict || number == 0 || number > items) continue;
        if (!out[number - 1]) out[number - 1] = verdict;
    }
    return out;
}

std::optional<bool> parse_single_verdict(std::string_view text, std::string_view positive,
                                         std::string_view negative) {
    for (auto line : lines_of(text)) {
        if (line.empty()) continue;
        auto word = upper_word(line);
        if (word == positive) return true;
        if (word == negative) return false;
        return std::nullopt;
    }
    return std::nullopt;
}

std::string number_items(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += std::to_string(i + 1) + ". " + items[i] + "\n";
    return out;
}

void to_json(json& j, const JudgeCall& v) {
    j = json{{"kind", v.kind}, {"item", v.item}, {"attempt", v.attempt}, {"prompt", v.prompt},
             {"response", v.response}};
}

void from_json(const json& j, JudgeCall& v) {
    v.kind = j.at("kind").get<std::string>();
    v.item = j.value("item", -1);
    v.attempt = j.value("attempt", 0);
    v.prompt = j.value("prompt", std::string{});
    v.response = j.at("response").get<std::string>();
}

void JudgeLog::add(JudgeCall call) {
    std::lock_guard lock(mu_);
    calls_.push_back(std::move(call));
}

std::vector<JudgeCall> JudgeLog::take() {
    std::lock_guard lock(mu_);
    return std::exchange(calls_, {});
}

}  // namespace agentforge

#include "agentforge/text.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <regex>

namespace agentforge {

namespace {
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
}  // namespace

std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string normalize_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : trim(s)) {
        if (is_space(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        auto norm = normalize_text(current);
        while (!norm.empty() && std::ispunct(static_cast<unsigned char>(norm.back()))) norm.pop_back();
        norm = std::string(trim(norm));
        if (!norm.empty()) out.push_back(std::move(norm));
        current.clear();
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        current += c;
        const bool terminal = c == '.' || c == '!' || c == '?';
        const bool boundary = i + 1 == s.size() || is_space(s[i + 1]);
        if (c == '\n' || (terminal && boundary)) flush();
    }
    flush();
    return out;
}

std::optional<std::string> extract_json_block(std::string_view s) {
    for (std::size_t start = 0; start < s.size(); ++start) {
        if (s[start] != '{' && s[start] != '[') continue;
        std::vector<char> stack;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < s.size(); ++i) {
            char c = s[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{' || c == '[') stack.push_back(c);
            else if (c == '}' || c == ']') {
                const char open = c == '}' ? '{' : '[';
                if (stack.empty() || stack.back() != open) break;
                stack.pop_back();
                if (stack.empty()) return std::string(s.substr(start, i - start + 1));
            }
        }
    }
    return std::nullopt;
}

std::optional<std::string> extract_tag(std::string_view s, std::string_view tag) {
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";
    auto a = s.find(open);
    if (a == std::string_view::npos) return std::nullopt;
    a += open.size();
    auto b = s.find(close, a);
    if (b == std::string_view::npos) return std::nullopt;
    return std::string(s.substr(a, b - a));
}

std::optional<std::string> canonical_number(std::string_view s) {
    std::string digits;
    s = trim(s);
    bool negative = false;
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
        negative = s.front() == '-';
        s.remove_prefix(1);
    }
    if (s.empty()) return std::nullopt;
    bool seen_dot = false;
    bool seen_digit = false;
    for (char c : s) {
        if (c == ',') continue;
        if (c == '.') {
            if (seen_dot) return std::nullopt;
            seen_dot = true;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            seen_digit = true;
        } else {
            return std::nullopt;
        }
        digits += c;
    }
    if (!seen_digit) return std::nullopt;
    std::string int_part = digits;
    std::string frac_part;
    if (auto dot = digits.find('.'); dot != std::string::npos) {
        int_part = digits.substr(0, dot);
        frac_part = digits.substr(dot + 1);
    }
    int_part.erase(0, std::min(int_part.find_first_not_of('0'), int_part.size()));
    while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
    if (int_part.empty()) int_part = "0";
    std::string out = int_part;
    if (!frac_part.empty()) out += "." + frac_part;
    if (negative && out != "0") out = "-" + out;
    return out;
}

std::vector<std::string> extract_numerals(std::string_view s) {
    static const std::regex numeral(R"(\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?)");
    std::vector<std::string> out;
    std::string text(s);
    for (auto it = std::sregex_iterator(text.begin(), text.end(), numeral); it != std::sregex_iterator(); ++it)
        if (auto n = canonical_number(it->str())) out.push_back(*n);
    return out;
}

std::string canonicalize_answer(std::string_view s) {
    std::string out = normalize_text(s);
    auto strip = [&](char c) {
        while (!out.empty() && out.front() == c) out.erase(out.begin());
        while (!out.empty() && out.back() == c) out.pop_back();
    };
    strip('$');
    while (!out.empty() && out.back() == '.') out.pop_back();
    out = std::string(trim(out));
    if (auto n = canonical_number(out)) return *n;
    return out;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) break;
        auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos) break;
        out.append(tmpl.substr(pos, open - pos));
        std::string name(trim(tmpl.substr(open + 2, close - open - 2)));
        if (auto it = vars.find(name); it != vars.end()) out += it->second;
        else out.append(tmpl.substr(open, close + 2 - open));
        pos = close + 2;
    }
    out.append(tmpl.substr(pos));
    return out;
}

long estimate_tokens(std::string_view s) noexcept { return static_cast<long>((s.size() + 3) / 4); }

}  // namespace agentforge

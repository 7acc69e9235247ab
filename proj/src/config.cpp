#include "agentforge/config.hpp"

#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "agentforge/serialize.hpp"
#include "agentforge/text.hpp"

namespace agentforge {

std::string env_key_for(const std::string& key) {
    std::string out = "AGENTFORGE_";
    for (char c : key) out += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        auto eq = body.find('=');
        if (eq == std::string_view::npos) throw ParseError(number, "expected 'key = value'");
        auto key = std::string(trim(body.substr(0, eq)));
        if (key.empty()) throw ParseError(number, "empty key");
        cfg.values_[key] = std::string(trim(body.substr(eq + 1)));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

void Config::set(const std::string& key, const std::string& value) { overrides_[key] = value; }

bool Config::contains(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> Config::get(const std::string& key) const {
    if (auto it = overrides_.find(key); it != overrides_.end()) return it->second;
    if (const char* env = std::getenv(env_key_for(key).c_str())) return std::string(env);
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    return std::nullopt;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

long Config::get_int(const std::string& key, long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        long out = std::stol(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config '" + key + "' expects an integer, got '" + *v + "'");
    }
}

double Config::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        double out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config '" + key + "' expects a number, got '" + *v + "'");
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto s = to_lower(*v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("config '" + key + "' expects a boolean, got '" + *v + "'");
}

}  // namespace agentforge

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace agentforge {

/// Flat `key = value` settings shared by every command. Lines starting with
/// `#` are comments. `AGENTFORGE_<KEY>` environment variables (dots become
/// underscores, uppercased) override file values; explicit `set` calls
/// override both.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text);
    static Config load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    bool contains(const std::string& key) const;

    std::optional<std::string> get(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> overrides_;
};

std::string env_key_for(const std::string& key);

}  // namespace agentforge

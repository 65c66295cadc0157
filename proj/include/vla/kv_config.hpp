#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vla {

/// Ordered `key=value` text; '#' starts a comment, blank lines are ignored.
class KeyValues {
public:
    static KeyValues parse(const std::string& text, const std::string& context);
    static KeyValues load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    std::optional<std::string> find(const std::string& key) const;

    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    void set(const std::string& key, std::string value);
    const std::map<std::string, std::string>& values() const { return values_; }
    std::vector<std::string> keys() const;
    /// One `key=value` line per entry, keys sorted.
    std::string to_text() const;
    void merge(const KeyValues& other);

private:
    std::map<std::string, std::string> values_;
    std::string context_;
};

}  // namespace vla

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace gttt {

// Minimal TOML-style config reader: [section] headers, key = value lines,
// values are strings (quoted or bare), numbers, booleans, or flat arrays.
// Comments start with '#'.
class ConfigFile {
  public:
    using Value = std::variant<bool, double, std::string, std::vector<double>,
                               std::vector<std::string>>;

    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has_section(const std::string& section) const;
    bool has(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> get_double_array(const std::string& section, const std::string& key,
                                         const std::vector<double>& fallback) const;
    std::vector<std::string> get_string_array(const std::string& section, const std::string& key,
                                              const std::vector<std::string>& fallback) const;

    std::string require_string(const std::string& section, const std::string& key) const;
    double require_double(const std::string& section, const std::string& key) const;

  private:
    const Value* find(const std::string& section, const std::string& key) const;
    [[noreturn]] void missing(const std::string& section, const std::string& key) const;

    std::map<std::string, std::map<std::string, Value>> sections_;
    std::string origin_;
};

}  // namespace gttt

#include "gttt/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gttt {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Strips an unquoted trailing comment.
std::string strip_comment(const std::string& s) {
    bool in_string = false;
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (c == quote) in_string = false;
        } else if (c == '"' || c == '\'') {
            in_string = true;
            quote = c;
        } else if (c == '#') {
            return s.substr(0, i);
        }
    }
    return s;
}

bool parse_number(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

ConfigFile::Value parse_scalar(const std::string& raw, const std::string& where) {
    const std::string s = trim(raw);
    if (s.empty()) throw std::invalid_argument(where + ": empty value");
    if (s == "true") return true;
    if (s == "false") return false;
    if ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')) {
        if (s.size() < 2) throw std::invalid_argument(where + ": unterminated string");
        return s.substr(1, s.size() - 2);
    }
    double num = 0.0;
    if (parse_number(s, num)) return num;
    return s;  // bare word
}

std::vector<std::string> split_array_items(const std::string& inner) {
    std::vector<std::string> items;
    std::string cur;
    bool in_string = false;
    char quote = 0;
    for (const char c : inner) {
        if (in_string) {
            cur += c;
            if (c == quote) in_string = false;
        } else if (c == '"' || c == '\'') {
            cur += c;
            in_string = true;
            quote = c;
        } else if (c == ',') {
            items.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) items.push_back(cur);
    return items;
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) throw std::invalid_argument(where + ": empty section name");
            cfg.sections_[section];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument(where + ": empty key");
        if (value.empty()) throw std::invalid_argument(where + ": empty value for '" + key + "'");

        if (value.front() == '[') {
            if (value.back() != ']')
                throw std::invalid_argument(where + ": unterminated array");
            const auto items = split_array_items(value.substr(1, value.size() - 2));
            bool all_numbers = !items.empty();
            std::vector<double> nums;
            for (const auto& item : items) {
                double num = 0.0;
                if (parse_number(trim(item), num)) nums.push_back(num);
                else {
                    all_numbers = false;
                    break;
                }
            }
            if (all_numbers) {
                cfg.sections_[section][key] = nums;
            } else {
                std::vector<std::string> strs;
                for (const auto& item : items) {
                    const auto v = parse_scalar(item, where);
                    if (std::holds_alternative<std::string>(v))
                        strs.push_back(std::get<std::string>(v));
                    else if (std::holds_alternative<double>(v))
                        strs.push_back(trim(item));
                    else
                        throw std::invalid_argument(where + ": mixed array types");
                }
                cfg.sections_[section][key] = strs;
            }
        } else {
            cfg.sections_[section][key] = parse_scalar(value, where);
        }
    }
    return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

bool ConfigFile::has_section(const std::string& section) const {
    return sections_.count(section) > 0;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

const ConfigFile::Value* ConfigFile::find(const std::string& section,
                                          const std::string& key) const {
    const auto sit = sections_.find(section);
    if (sit == sections_.end()) return nullptr;
    const auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return nullptr;
    return &kit->second;
}

void ConfigFile::missing(const std::string& section, const std::string& key) const {
    throw std::invalid_argument(origin_ + ": missing required key [" + section + "] " + key);
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (std::holds_alternative<std::string>(*v)) return std::get<std::string>(*v);
    throw std::invalid_argument(origin_ + ": [" + section + "] " + key + " must be a string");
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (std::holds_alternative<double>(*v)) return std::get<double>(*v);
    throw std::invalid_argument(origin_ + ": [" + section + "] " + key + " must be a number");
}

std::int64_t ConfigFile::get_int(const std::string& section, const std::string& key,
                                 std::int64_t fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (std::holds_alternative<double>(*v)) {
        const double d = std::get<double>(*v);
        if (d != std::floor(d))
            throw std::invalid_argument(origin_ + ": [" + section + "] " + key +
                                        " must be an integer");
        return static_cast<std::int64_t>(d);
    }
    throw std::invalid_argument(origin_ + ": [" + section + "] " + key + " must be an integer");
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (std::holds_alternative<bool>(*v)) return std::get<bool>(*v);
    throw std::invalid_argument(origin_ + ": [" + section + "] " + key + " must be a boolean");
}

std::vector<double> ConfigFile::get_double_array(const std::string& section,
                                                 const std::string& key,
                                                 const std::vector<double>& fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (std::holds_alternative<std::vector<double>>(*v)) return std::get<std::vector<double>>(*v);
    throw std::invalid_argument(origin_ + ": [" + section + "] " + key +
                                " must be a numeric array");
}

std::vector<std::string> ConfigFile::get_string_array(
    const std::string& section, const std::string& key,
    const std::vector<std::string>& fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (std::holds_alternative<std::vector<std::string>>(*v))
        return std::get<std::vector<std::string>>(*v);
    throw std::invalid_argument(origin_ + ": [" + section + "] " + key +
                                " must be a string array");
}

std::string ConfigFile::require_string(const std::string& section, const std::string& key) const {
    const Value* v = find(section, key);
    if (!v) missing(section, key);
    if (std::holds_alternative<std::string>(*v)) return std::get<std::string>(*v);
    throw std::invalid_argument(origin_ + ": [" + section + "] " + key + " must be a string");
}

double ConfigFile::require_double(const std::string& section, const std::string& key) const {
    const Value* v = find(section, key);
    if (!v) missing(section, key);
    if (std::holds_alternative<double>(*v)) return std::get<double>(*v);
    throw std::invalid_argument(origin_ + ": [" + section + "] " + key + " must be a number");
}

}  // namespace gttt

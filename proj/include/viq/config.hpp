#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "viq/error.hpp"

// Flat typed key-value configuration:
//
//   # comment
//   section.key = 0.25
//   section.name = "text"
//   section.list = ["a", "b"]      or [1, 2, 3]
//   section.flag = true
//
// Keys are unique; every key must be consumed by the reader (see
// Config::check_consumed) so that typos fail loudly.

namespace viq {

class Config {
public:
    struct Value {
        std::string raw;
        std::size_t line = 0;
    };

    static Config parse(const std::string& text, const std::string& origin = "<config>") {
        Config cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string s = strip_comment(line);
            if (trim(s).empty()) continue;
            const auto eq = s.find('=');
            if (eq == std::string::npos) cfg.fail(lineno, "expected 'key = value'");
            const std::string key = trim(s.substr(0, eq));
            const std::string val = trim(s.substr(eq + 1));
            if (!valid_key(key)) cfg.fail(lineno, "invalid key '" + key + "'");
            if (val.empty()) cfg.fail(lineno, "missing value for '" + key + "'");
            if (cfg.values_.count(key)) cfg.fail(lineno, "duplicate key '" + key + "'");
            cfg.values_[key] = {val, lineno};
        }
        return cfg;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        return has(key) ? string_value(key) : (mark(key), fallback);
    }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? double_value(key, lookup(key).raw) : (mark(key), fallback);
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        return has(key) ? u64_value(key, lookup(key).raw) : (mark(key), fallback);
    }
    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        return static_cast<std::size_t>(get_u64(key, fallback));
    }
    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = lookup(key);
        if (v.raw == "true") return true;
        if (v.raw == "false") return false;
        fail(v.line, "'" + key + "' must be true or false");
    }
    std::vector<std::string> get_string_list(const std::string& key,
                                             const std::vector<std::string>& fallback) const {
        if (!has(key)) return fallback;
        std::vector<std::string> out;
        for (const auto& item : list_items(key)) out.push_back(unquote(key, item));
        return out;
    }
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const {
        if (!has(key)) return fallback;
        std::vector<double> out;
        for (const auto& item : list_items(key)) out.push_back(double_value(key, item));
        return out;
    }
    std::vector<std::size_t> get_size_list(const std::string& key,
                                           const std::vector<std::size_t>& fallback) const {
        if (!has(key)) return fallback;
        std::vector<std::size_t> out;
        for (const auto& item : list_items(key))
            out.push_back(static_cast<std::size_t>(u64_value(key, item)));
        return out;
    }

    /// Throws if any key in the file was never read.
    void check_consumed() const {
        for (const auto& [key, v] : values_)
            if (!used_.count(key)) fail(v.line, "unknown key '" + key + "'");
    }

    const std::map<std::string, Value>& entries() const { return values_; }

    /// Canonical text form (sorted keys), used to record configs in manifests.
    std::string canonical() const {
        std::string out;
        for (const auto& [key, v] : values_) out += key + " = " + v.raw + "\n";
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    static std::string strip_comment(const std::string& s) {
        bool quoted = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') quoted = !quoted;
            if (s[i] == '#' && !quoted) return s.substr(0, i);
        }
        return s;
    }

    static bool valid_key(const std::string& k) {
        if (k.empty() || k.find('.') == std::string::npos || k.front() == '.' || k.back() == '.')
            return false;
        for (char c : k)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
        return true;
    }

    [[noreturn]] void fail(std::size_t line, const std::string& msg) const {
        throw ParseError(ParseError::Kind::Syntax,
                         origin_ + ":" + std::to_string(line) + ": " + msg);
    }

    const Value& lookup(const std::string& key) const {
        mark(key);
        return values_.at(key);
    }
    void mark(const std::string& key) const { used_.insert(key); }

    std::string unquote(const std::string& key, const std::string& s) const {
        if (s.size() < 2 || s.front() != '"' || s.back() != '"')
            fail(lookup(key).line, "'" + key + "' expects a quoted string");
        return s.substr(1, s.size() - 2);
    }

    std::string string_value(const std::string& key) const {
        return unquote(key, lookup(key).raw);
    }

    double double_value(const std::string& key, const std::string& s) const {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos == s.size()) return v;
        } catch (const std::exception&) {
        }
        fail(lookup(key).line, "'" + key + "' expects a number, got '" + s + "'");
    }

    std::uint64_t u64_value(const std::string& key, const std::string& s) const {
        try {
            std::size_t pos = 0;
            if (!s.empty() && s.front() != '-') {
                const unsigned long long v = std::stoull(s, &pos, 0);
                if (pos == s.size()) return v;
            }
        } catch (const std::exception&) {
        }
        fail(lookup(key).line, "'" + key + "' expects a nonnegative integer, got '" + s + "'");
    }

    std::vector<std::string> list_items(const std::string& key) const {
        const auto& v = lookup(key);
        const std::string& s = v.raw;
        if (s.size() < 2 || s.front() != '[' || s.back() != ']')
            fail(v.line, "'" + key + "' expects a bracketed list");
        std::vector<std::string> items;
        std::string cur;
        bool quoted = false;
        int depth = 0;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            const char c = s[i];
            if (c == '"') quoted = !quoted;
            if (!quoted && c == '(') ++depth;
            if (!quoted && c == ')') --depth;
            if (c == ',' && !quoted && depth == 0) {
                items.push_back(trim(cur));
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (quoted) fail(v.line, "unterminated string in '" + key + "'");
        if (!trim(cur).empty() || !items.empty()) items.push_back(trim(cur));
        for (const auto& it : items)
            if (it.empty()) fail(v.line, "empty list element in '" + key + "'");
        return items;
    }

    std::string origin_;
    std::map<std::string, Value> values_;
    mutable std::set<std::string> used_;
};

}  // namespace viq

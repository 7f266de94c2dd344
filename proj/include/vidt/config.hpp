#pragma once

// Plain-text run configuration.
//
// Grammar (one entry per line):
//   [section]
//   key = value        # trailing comments allowed
// Blank lines and lines starting with '#' are ignored. Keys must be unique
// within their section. Unknown sections or keys are errors, so a typo never
// silently falls back to a default.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vidt {

[[noreturn]] inline void config_error(const std::string& msg) {
    throw std::invalid_argument("config error: " + msg);
}

class Config {
public:
    Config() = default;

    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream is(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            if (s.front() == '[') {
                if (s.back() != ']') config_error("line " + std::to_string(lineno) + ": bad section header");
                section = strip(s.substr(1, s.size() - 2));
                if (section.empty()) config_error("line " + std::to_string(lineno) + ": empty section name");
                cfg.sections_[section];
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                config_error("line " + std::to_string(lineno) + ": expected key = value, got '" + s + "'");
            std::string key = strip(s.substr(0, eq));
            std::string value = strip(strip_comment(s.substr(eq + 1)));
            if (key.empty()) config_error("line " + std::to_string(lineno) + ": empty key");
            if (section.empty()) config_error("line " + std::to_string(lineno) + ": key outside any [section]");
            auto& sec = cfg.sections_[section];
            if (sec.count(key)) config_error("duplicate key '" + section + "." + key + "'");
            sec[key] = value;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config file: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& section, const std::string& key) const {
        auto it = sections_.find(section);
        return it != sections_.end() && it->second.count(key) > 0;
    }

    std::string get_str(const std::string& section, const std::string& key,
                        const std::string& fallback) const {
        auto it = sections_.find(section);
        if (it == sections_.end()) return fallback;
        auto kt = it->second.find(key);
        return kt == it->second.end() ? fallback : kt->second;
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        if (!has(section, key)) return fallback;
        return parse_double(section, key);
    }

    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = get_str(section, key, "");
        size_t used = 0;
        std::int64_t out = 0;
        try {
            out = std::stoll(v, &used);
        } catch (...) {
            config_error("'" + section + "." + key + "' is not an integer: '" + v + "'");
        }
        if (used != v.size()) config_error("'" + section + "." + key + "' is not an integer: '" + v + "'");
        return out;
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = get_str(section, key, "");
        if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
        if (v == "off" || v == "false" || v == "0" || v == "no") return false;
        config_error("'" + section + "." + key + "' is not a boolean: '" + v + "'");
    }

    // "1,3,4" -> {1,3,4}; empty string -> {}
    std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                  std::vector<int> fallback) const {
        if (!has(section, key)) return fallback;
        const std::string v = get_str(section, key, "");
        std::vector<int> out;
        std::istringstream is(v);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            tok = strip(tok);
            if (tok.empty()) continue;
            out.push_back(std::stoi(tok));
        }
        return out;
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        sections_[section][key] = value;
    }

    // Rejects any key outside the given schema.
    void validate(const std::map<std::string, std::set<std::string>>& schema) const {
        for (const auto& [section, kv] : sections_) {
            auto st = schema.find(section);
            if (st == schema.end()) config_error("unknown section [" + section + "]");
            for (const auto& [key, _] : kv)
                if (!st->second.count(key))
                    config_error("unknown key '" + key + "' in section [" + section + "]");
        }
    }

    // Deterministic text echo (sections and keys sorted) for hashing and
    // for embedding in checkpoints.
    std::string canonical_text() const {
        std::ostringstream os;
        for (const auto& [section, kv] : sections_) {
            os << "[" << section << "]\n";
            for (const auto& [key, value] : kv) os << key << " = " << value << "\n";
        }
        return os.str();
    }

private:
    static std::string strip(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    static std::string strip_comment(const std::string& s) {
        auto pos = s.find('#');
        return pos == std::string::npos ? s : s.substr(0, pos);
    }

    double parse_double(const std::string& section, const std::string& key) const {
        const std::string v = get_str(section, key, "");
        size_t used = 0;
        double out = 0;
        try {
            out = std::stod(v, &used);
        } catch (...) {
            config_error("'" + section + "." + key + "' is not a number: '" + v + "'");
        }
        if (used != v.size()) config_error("'" + section + "." + key + "' is not a number: '" + v + "'");
        return out;
    }

    std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace vidt

#include "co2rl/common/kvfile.hpp"

#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "co2rl/common/errors.hpp"

namespace co2rl {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool valid_key(const std::string& k) {
    if (k.empty() || k.front() == '.' || k.back() == '.') return false;
    for (char c : k) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
            return false;
    }
    return true;
}

}  // namespace

KvTree KvTree::parse_string(const std::string& text, const std::string& origin) {
    KvTree tree;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header: " + t);
            section = trim(t.substr(1, t.size() - 2));
            if (!section.empty() && !valid_key(section))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": invalid section name: " + section);
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value': " + t);
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (!valid_key(key))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": invalid key: " + key);
        const std::string full = section.empty() ? key : section + "." + key;
        if (tree.values_.count(full))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key: " + full);
        tree.values_[full] = value;
    }
    return tree;
}

KvTree KvTree::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
}

std::string KvTree::serialize() const {
    std::string out;
    std::string current_section;
    bool first = true;
    for (const auto& [key, value] : values_) {
        const std::size_t dot = key.rfind('.');
        const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
        const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
        if (section != current_section || first) {
            if (!first) out += "\n";
            if (!section.empty()) out += "[" + section + "]\n";
            current_section = section;
        }
        out += leaf + " = " + value + "\n";
        first = false;
    }
    return out;
}

void KvTree::write_file(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write file: " + path);
    f << serialize();
    if (!f) throw IoError("write failed: " + path);
}

void KvTree::set_double(const std::string& key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    values_[key] = buf;
}

void KvTree::set_int(const std::string& key, std::int64_t v) { values_[key] = std::to_string(v); }

std::string KvTree::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key: " + key);
    consumed_.insert(key);
    return it->second;
}

std::string KvTree::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
}

double KvTree::get_double(const std::string& key) const {
    const std::string s = get_string(key);
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE)
        throw ConfigError("config key " + key + " is not a number: '" + s + "'");
    return v;
}

double KvTree::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return get_double(key);
}

std::int64_t KvTree::get_int(const std::string& key) const {
    const std::string s = get_string(key);
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE)
        throw ConfigError("config key " + key + " is not an integer: '" + s + "'");
    return v;
}

std::int64_t KvTree::get_int(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    return get_int(key);
}

bool KvTree::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get_string(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key " + key + " is not a boolean: '" + s + "'");
}

std::vector<std::string> KvTree::keys() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
}

std::vector<std::string> KvTree::subsections(const std::string& prefix) const {
    std::set<std::string> names;
    const std::string p = prefix + ".";
    for (const auto& [k, v] : values_) {
        if (k.rfind(p, 0) != 0) continue;
        const std::string rest = k.substr(p.size());
        const std::size_t dot = rest.find('.');
        if (dot != std::string::npos) names.insert(rest.substr(0, dot));
    }
    return {names.begin(), names.end()};
}

std::vector<std::string> KvTree::unconsumed_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
        if (!consumed_.count(k)) out.push_back(k);
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ' ';
        os << v[i];
    }
    return os.str();
}

std::vector<int> split_ints(const std::string& s) {
    std::istringstream is(s);
    std::vector<int> out;
    int x = 0;
    while (is >> x) out.push_back(x);
    return out;
}

}  // namespace co2rl

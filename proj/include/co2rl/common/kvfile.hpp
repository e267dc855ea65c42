#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace co2rl {

// Ordered nested key-value text format used for run configurations, model
// files and sidecar manifests.
//
//   # comment
//   [section.subsection]
//   key = value
//
// Keys are addressed as dotted paths ("grid.nx"). Serialization is canonical:
// sections and keys come out sorted, so equal trees serialize to equal text
// and digests are stable.
class KvTree {
public:
    static KvTree parse_string(const std::string& text, const std::string& origin = "<string>");
    static KvTree parse_file(const std::string& path);

    std::string serialize() const;
    void write_file(const std::string& path) const;

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    bool empty() const { return values_.empty(); }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set_double(const std::string& key, double v);
    void set_int(const std::string& key, std::int64_t v);
    void set_bool(const std::string& key, bool v) { values_[key] = v ? "true" : "false"; }

    // Typed getters; the no-default forms throw ConfigError when missing.
    // Every get marks the key consumed so unknown keys can be rejected later.
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // dotted paths of every stored key, sorted
    std::vector<std::string> keys() const;
    // immediate child section names under a prefix (e.g. wells -> {I1, P1})
    std::vector<std::string> subsections(const std::string& prefix) const;

    void mark_consumed(const std::string& key) const { consumed_.insert(key); }
    // keys never touched by any getter; used to reject unknown configuration
    std::vector<std::string> unconsumed_keys() const;

    bool operator==(const KvTree& other) const { return values_ == other.values_; }

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

// Space-separated integer lists, used for layer-width metadata values.
std::string join_ints(const std::vector<int>& v);
std::vector<int> split_ints(const std::string& s);

}  // namespace co2rl

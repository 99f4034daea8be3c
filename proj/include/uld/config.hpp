#pragma once

#include <map>
#include <string>
#include <vector>

namespace uld {

// Flat key-value configuration file: one `key = value` per line, `#` starts a
// comment. Keys are kept in sorted order so dumps are stable.
class Config {
  public:
    Config() = default;

    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;  // on/off/true/false/1/0
    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const;  // comma-separated

    const std::map<std::string, std::string>& entries() const { return values_; }
    std::string dump() const;
    void save(const std::string& path) const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace uld

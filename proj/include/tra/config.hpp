#pragma once

#include <map>
#include <optional>
#include <string>

namespace tra {

// Flat key-value config file with optional [section] headers and '#'
// comments. Keys are stored as "section.key" ("key" outside any section).
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key, double dflt) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;

  std::string dump() const;  // grouped by section, keys sorted

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace tra

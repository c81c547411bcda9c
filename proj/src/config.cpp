#include "tra/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tra {

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str());
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: missing '=' on line " +
                               std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key on line " +
                               std::to_string(lineno));
    cfg.set(section.empty() ? key : section + "." + key, value);
  }
  return cfg;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const {
  return kv_.count(key) > 0;
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_or(const std::string& key,
                                   const std::string& dflt) const {
  const auto v = get(key);
  return v ? *v : dflt;
}

double KeyValueConfig::get_double(const std::string& key, double dflt) const {
  const auto v = get(key);
  if (!v) return dflt;
  try {
    return std::stod(*v);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not a number: " +
                             *v);
  }
}

int64_t KeyValueConfig::get_int(const std::string& key, int64_t dflt) const {
  const auto v = get(key);
  if (!v) return dflt;
  try {
    size_t pos = 0;
    const int64_t r = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing chars");
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not an integer: " +
                             *v);
  }
}

std::string KeyValueConfig::dump() const {
  std::ostringstream os;
  std::string current_section;
  bool first = true;
  for (const auto& [key, value] : kv_) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (section != current_section || first) {
      if (!section.empty()) {
        if (!first) os << "\n";
        os << "[" << section << "]\n";
      }
      current_section = section;
    }
    first = false;
    os << name << " = " << value << "\n";
  }
  return os.str();
}

}  // namespace tra

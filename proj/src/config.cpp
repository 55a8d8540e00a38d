#include "mstream/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mstream/errors.hpp"

namespace mstream {

namespace pt = boost::property_tree;

Config Config::parse(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
  Config cfg;
  for (const auto& [name, section] : tree) {
    if (!section.data().empty()) throw ConfigError("config key '" + name + "' outside of a [section]");
    for (const auto& [key, value] : section) cfg.set(name, key, value.get_value<std::string>());
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

const std::string* Config::find(const std::string& section, const std::string& key) const {
  for (const auto& s : sections_) {
    if (s.name != section) continue;
    for (const auto& [k, v] : s.entries) {
      if (k == key) return &v;
    }
  }
  return nullptr;
}

bool Config::has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }

std::string Config::get(const std::string& section, const std::string& key, const std::string& fallback) const {
  const std::string* v = find(section, key);
  return v ? *v : fallback;
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  int out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("[" + section + "] " + key + ": expected an integer, got '" + *v + "'");
  }
  return out;
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  double out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("[" + section + "] " + key + ": expected a number, got '" + *v + "'");
  }
  return out;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "off" || *v == "no") return false;
  throw ConfigError("[" + section + "] " + key + ": expected a boolean, got '" + *v + "'");
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  for (auto& s : sections_) {
    if (s.name != section) continue;
    for (auto& [k, v] : s.entries) {
      if (k == key) {
        v = value;
        return;
      }
    }
    s.entries.emplace_back(key, value);
    return;
  }
  sections_.push_back({section, {{key, value}}});
}

void Config::merge(const Config& other) {
  for (const auto& s : other.sections_) {
    for (const auto& [k, v] : s.entries) set(s.name, k, v);
  }
}

std::vector<std::string> Config::sections() const {
  std::vector<std::string> out;
  for (const auto& s : sections_) out.push_back(s.name);
  return out;
}

std::vector<std::pair<std::string, std::string>> Config::entries(const std::string& section) const {
  for (const auto& s : sections_) {
    if (s.name == section) return s.entries;
  }
  return {};
}

std::string Config::serialize() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& s : sections_) {
    if (!first) out << '\n';
    first = false;
    out << '[' << s.name << "]\n";
    for (const auto& [k, v] : s.entries) out << k << " = " << v << '\n';
  }
  return out.str();
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << serialize();
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw ContractError("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace mstream

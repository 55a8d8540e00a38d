#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mstream {

// Sectioned key-value configuration ("[section]" headers, "key = value"
// lines). Keys keep their insertion order so serialization is stable.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);
  // Values from other replace or extend this config.
  void merge(const Config& other);

  std::vector<std::string> sections() const;
  std::vector<std::pair<std::string, std::string>> entries(const std::string& section) const;
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

 private:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  const std::string* find(const std::string& section, const std::string& key) const;
  std::vector<Section> sections_;
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace mstream

#pragma once

// Cohort manifest: one CSV row per subject with demographics, labels,
// optional expert/AI scores and the paths of the three drawings.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mstream/domain.hpp"

namespace mstream {

struct SubjectRecord {
  std::string subject_id;
  Demographics demographics;
  std::optional<double> mmse;  // 0-30
  std::optional<double> cdr;   // 0 or 0.5
  Label label = Label::cn;
  std::optional<ScoreTriple> expert_scores;
  std::optional<ScoreTriple> ai_scores;
  std::array<std::string, 3> image_paths;  // by condition; relative to the manifest directory

  // Range checks and the cdr/label agreement rule (0 -> CN, 0.5 -> MCI).
  void validate(const std::string& context) const;
  bool operator==(const SubjectRecord&) const = default;
};

struct CohortManifest {
  std::string provenance;
  std::string format_version = "1";
  std::vector<SubjectRecord> records;
  std::filesystem::path base_dir;  // where relative image paths resolve

  std::filesystem::path image_path(const SubjectRecord& r, Condition c) const;
  const SubjectRecord& find(const std::string& subject_id) const;
};

inline const std::array<const char*, 16> kManifestColumns{
    "subject_id", "age",    "sex",    "education", "mmse",     "cdr",      "label",    "expert_copy",
    "expert_imm", "expert_del", "ai_copy", "ai_imm", "ai_del", "img_copy", "img_imm", "img_del"};

// Lines starting with '#' before the header carry "key: value" metadata
// (provenance, format_version). Any violation fails with the row number.
CohortManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
CohortManifest load_manifest(const std::filesystem::path& path, bool check_images = true);

std::string format_manifest(const CohortManifest& manifest);
void save_manifest(const CohortManifest& manifest, const std::filesystem::path& path);

// Small CSV helpers shared by the other file formats. Fields may not contain
// commas or quotes.
std::vector<std::string> split_csv_line(const std::string& line);
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
double parse_number(const std::string& field, const std::string& context);

}  // namespace mstream

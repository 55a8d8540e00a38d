#include "mstream/manifest.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mstream/config.hpp"
#include "mstream/errors.hpp"

namespace mstream {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::optional<double> optional_number(const std::string& field, const std::string& context) {
  if (field.empty()) return std::nullopt;
  return parse_number(field, context);
}

std::optional<ScoreTriple> optional_triple(const std::string& a, const std::string& b, const std::string& c,
                                           const std::string& context) {
  const int present = !a.empty() + !b.empty() + !c.empty();
  if (present == 0) return std::nullopt;
  if (present != 3) throw DataError(context + ": score triple is partially filled");
  return ScoreTriple{parse_number(a, context), parse_number(b, context), parse_number(c, context)};
}

std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

void SubjectRecord::validate(const std::string& context) const {
  if (subject_id.empty()) throw DataError(context + ": empty subject_id");
  demographics.validate(context);
  if (mmse && (!std::isfinite(*mmse) || *mmse < 0 || *mmse > 30)) {
    throw DataError(context + ": mmse " + format_double(*mmse) + " outside [0, 30]");
  }
  if (cdr) {
    if (*cdr != 0.0 && *cdr != 0.5) throw DataError(context + ": cdr must be 0 or 0.5");
    const Label implied = *cdr == 0.0 ? Label::cn : Label::mci;
    if (implied != label) throw DataError(context + ": cdr " + format_double(*cdr) + " contradicts label " + to_string(label));
  }
  if (expert_scores) expert_scores->validate(context + " expert");
  if (ai_scores) ai_scores->validate(context + " ai");
}

std::filesystem::path CohortManifest::image_path(const SubjectRecord& r, Condition c) const {
  const std::string& p = r.image_paths[static_cast<std::size_t>(c)];
  if (p.empty()) throw DataError("subject " + r.subject_id + ": no " + to_string(c) + " image");
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

const SubjectRecord& CohortManifest::find(const std::string& subject_id) const {
  for (const auto& r : records) {
    if (r.subject_id == subject_id) return r;
  }
  throw DataError("unknown subject '" + subject_id + "'");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(trim(current));
      current.clear();
    } else if (ch != '\r') {
      current += ch;
    }
  }
  fields.push_back(trim(current));
  return fields;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line[0] == '#') continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

double parse_number(const std::string& field, const std::string& context) {
  double value = 0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw FormatError(context + ": '" + field + "' is not a number");
  }
  return value;
}

CohortManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  CohortManifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> column;
  std::set<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = trim(line.substr(1, colon - 1));
      const std::string value = trim(line.substr(colon + 1));
      if (key == "provenance") m.provenance = value;
      if (key == "format_version") m.format_version = value;
      continue;
    }
    auto fields = split_csv_line(line);
    if (column.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i) column[fields[i]] = i;
      for (const char* name : kManifestColumns) {
        if (!column.count(name)) throw FormatError("manifest header is missing column '" + std::string(name) + "'");
      }
      continue;
    }
    const std::string context = "manifest row " + std::to_string(line_no);
    if (fields.size() != column.size()) {
      throw FormatError(context + ": expected " + std::to_string(column.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    auto f = [&](const char* name) -> const std::string& { return fields[column.at(name)]; };
    SubjectRecord r;
    r.subject_id = f("subject_id");
    r.demographics.age = parse_number(f("age"), context + " age");
    r.demographics.sex = sex_from_string(f("sex"));
    r.demographics.education = parse_number(f("education"), context + " education");
    r.mmse = optional_number(f("mmse"), context + " mmse");
    r.cdr = optional_number(f("cdr"), context + " cdr");
    r.label = label_from_string(f("label"));
    r.expert_scores = optional_triple(f("expert_copy"), f("expert_imm"), f("expert_del"), context + " expert");
    r.ai_scores = optional_triple(f("ai_copy"), f("ai_imm"), f("ai_del"), context + " ai");
    r.image_paths = {f("img_copy"), f("img_imm"), f("img_del")};
    r.validate(context + " (" + r.subject_id + ")");
    if (!seen_ids.insert(r.subject_id).second) throw DataError(context + ": duplicate subject_id '" + r.subject_id + "'");
    m.records.push_back(std::move(r));
  }
  if (column.empty()) throw FormatError("manifest has no header");
  return m;
}

CohortManifest load_manifest(const std::filesystem::path& path, bool check_images) {
  CohortManifest m = parse_manifest(read_text_file(path), path.parent_path());
  if (check_images) {
    for (const auto& r : m.records) {
      for (Condition c : kConditions) {
        if (r.image_paths[static_cast<std::size_t>(c)].empty()) continue;
        const auto p = m.image_path(r, c);
        if (!std::filesystem::exists(p)) {
          throw DataError("subject " + r.subject_id + ": " + to_string(c) + " image " + p.string() + " does not exist");
        }
      }
    }
  }
  return m;
}

std::string format_manifest(const CohortManifest& manifest) {
  std::ostringstream out;
  if (!manifest.provenance.empty()) out << "# provenance: " << manifest.provenance << '\n';
  out << "# format_version: " << manifest.format_version << '\n';
  for (std::size_t i = 0; i < kManifestColumns.size(); ++i) out << (i ? "," : "") << kManifestColumns[i];
  out << '\n';
  auto triple = [&](const std::optional<ScoreTriple>& t) {
    if (!t) return std::string(",,");
    return format_double(t->copy) + "," + format_double(t->immediate) + "," + format_double(t->delayed);
  };
  for (const auto& r : manifest.records) {
    out << r.subject_id << ',' << format_double(r.demographics.age) << ',' << to_string(r.demographics.sex) << ','
        << format_double(r.demographics.education) << ',' << format_optional(r.mmse) << ',' << format_optional(r.cdr)
        << ',' << to_string(r.label) << ',' << triple(r.expert_scores) << ',' << triple(r.ai_scores) << ','
        << r.image_paths[0] << ',' << r.image_paths[1] << ',' << r.image_paths[2] << '\n';
  }
  return out.str();
}

void save_manifest(const CohortManifest& manifest, const std::filesystem::path& path) {
  write_text_file(path, format_manifest(manifest));
}

}  // namespace mstream

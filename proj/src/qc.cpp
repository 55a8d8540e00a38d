#include "mstream/qc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "mstream/synthetic.hpp"

namespace mstream {

std::string to_string(RSquaredKind kind) { return kind == RSquaredKind::pearson ? "pearson" : "determination"; }

RSquaredKind r_squared_kind_from_string(const std::string& name) {
  if (name == "pearson") return RSquaredKind::pearson;
  if (name == "determination") return RSquaredKind::determination;
  throw ConfigError("unknown r_squared kind '" + name + "' (expected pearson or determination)");
}

Agreement compare_scores(std::span<const double> expert, std::span<const double> ai, RSquaredKind kind) {
  if (expert.size() != ai.size()) throw ContractError("compare_scores: lists differ in length");
  const std::size_t n = expert.size();
  if (n < 2) throw ContractError("compare_scores: need at least two pairs");
  Agreement a;
  double me = 0, ma = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a.mae += std::abs(expert[i] - ai[i]);
    me += expert[i];
    ma += ai[i];
  }
  const double dn = static_cast<double>(n);
  a.mae /= dn;
  me /= dn;
  ma /= dn;
  double see = 0, saa = 0, sea = 0, res = 0;
  for (std::size_t i = 0; i < n; ++i) {
    see += (expert[i] - me) * (expert[i] - me);
    saa += (ai[i] - ma) * (ai[i] - ma);
    sea += (expert[i] - me) * (ai[i] - ma);
    res += (expert[i] - ai[i]) * (expert[i] - ai[i]);
  }
  if (kind == RSquaredKind::pearson) {
    if (see == 0 || saa == 0) throw RSquaredUndefined("r^2 undefined: a score list has zero variance", a.mae);
    a.r_squared = std::clamp(sea * sea / (see * saa), 0.0, 1.0);
  } else {
    if (see == 0) throw RSquaredUndefined("R^2 undefined: expert scores have zero variance", a.mae);
    a.r_squared = 1.0 - res / see;
  }
  return a;
}

Agreement compare_scores(const std::vector<ScorePair>& pairs, RSquaredKind kind) {
  std::vector<double> e, a;
  for (const auto& p : pairs) {
    e.push_back(p.expert);
    a.push_back(p.ai);
  }
  return compare_scores(e, a, kind);
}

std::vector<Flag> flag_discrepancies(const std::vector<ScorePair>& pairs, double threshold) {
  std::vector<Flag> out;
  for (const auto& p : pairs) {
    const double d = std::abs(p.expert - p.ai);
    if (d > threshold) out.push_back({p.image_id, p.condition, p.expert, p.ai, d});
  }
  return out;
}

QcReport assess_scores(const std::vector<ScorePair>& pairs, double threshold, RSquaredKind kind) {
  QcReport r;
  r.kind = kind;
  r.threshold = threshold;
  r.pairs = pairs.size();
  r.before = compare_scores(pairs, kind);
  r.after = r.before;
  r.flagged = flag_discrepancies(pairs, threshold);
  r.flagged_after = r.flagged;
  return r;
}

QcResult apply_corrections(const std::vector<ScorePair>& pairs, const std::vector<Correction>& corrections,
                           double threshold, RSquaredKind kind) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!index.emplace(pairs[i].image_id, i).second) throw DataError("duplicate image id '" + pairs[i].image_id + "'");
  }
  std::vector<std::string> unknown;
  for (const auto& c : corrections) {
    if (!index.count(c.image_id)) unknown.push_back(c.image_id);
    if (!std::isfinite(c.corrected_score) || c.corrected_score < 0 || c.corrected_score > kMaxFigureScore) {
      throw DataError("correction for '" + c.image_id + "': score " + format_double(c.corrected_score) +
                      " outside [0, 36]");
    }
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& id : unknown) list += (list.empty() ? "" : ", ") + id;
    throw DataError("corrections reference unknown image ids: " + list);
  }

  QcResult out;
  out.report = assess_scores(pairs, threshold, kind);
  out.report.has_corrections = true;
  std::set<std::string> flagged;
  for (const auto& f : out.report.flagged) flagged.insert(f.image_id);
  out.corrected = pairs;
  for (const auto& c : corrections) {
    auto& p = out.corrected[index[c.image_id]];
    out.report.audit.push_back({c.image_id, p.expert, c.corrected_score, c.note, !flagged.count(c.image_id)});
    p.expert = c.corrected_score;
  }
  out.report.corrections_applied = corrections.size();
  out.report.after = compare_scores(out.corrected, kind);
  out.report.flagged_after = flag_discrepancies(out.corrected, threshold);
  return out;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string QcReport::to_text() const {
  std::ostringstream out;
  const std::string r2 = kind == RSquaredKind::pearson ? "R^2 (squared Pearson)" : "R^2 (coefficient of determination)";
  out << "Score QC: " << pairs << " image scores, flag when |expert - ai| > " << format_double(threshold) << "\n";
  out << "before: " << r2 << " = " << fixed(before.r_squared, 3) << ", MAE = " << fixed(before.mae, 2)
      << ", flagged = " << flagged.size() << "\n";
  if (has_corrections) {
    std::size_t oob = 0;
    for (const auto& a : audit) oob += a.out_of_band ? 1 : 0;
    out << "corrections applied: " << corrections_applied << " (out of band: " << oob << ")\n";
    out << "after:  " << r2 << " = " << fixed(after.r_squared, 3) << ", MAE = " << fixed(after.mae, 2)
        << ", flagged = " << flagged_after.size() << "\n";
  }
  return out.str();
}

std::string QcReport::summary_csv() const {
  std::ostringstream out;
  out << "stage,pairs,r_squared,mae,flagged\n";
  out << "before," << pairs << ',' << format_double(before.r_squared) << ',' << format_double(before.mae) << ','
      << flagged.size() << '\n';
  if (has_corrections) {
    out << "after," << pairs << ',' << format_double(after.r_squared) << ',' << format_double(after.mae) << ','
        << flagged_after.size() << '\n';
  }
  return out.str();
}

std::string QcReport::flags_csv() const {
  std::ostringstream out;
  out << "image_id,condition,expert_score,ai_score,abs_diff\n";
  for (const auto& f : flagged) {
    out << f.image_id << ',' << to_string(f.condition) << ',' << format_double(f.expert) << ','
        << format_double(f.ai) << ',' << format_double(f.abs_diff) << '\n';
  }
  return out.str();
}

std::string format_score_pairs(const std::vector<ScorePair>& pairs) {
  std::ostringstream out;
  out << "image_id,condition,expert_score,ai_score\n";
  for (const auto& p : pairs) {
    out << p.image_id << ',' << to_string(p.condition) << ',' << format_double(p.expert) << ',' << format_double(p.ai)
        << '\n';
  }
  return out.str();
}

std::string QcReport::audit_csv() const {
  std::ostringstream out;
  out << "image_id,old_score,new_score,out_of_band,note\n";
  for (const auto& a : audit) {
    out << a.image_id << ',' << format_double(a.old_score) << ',' << format_double(a.new_score) << ','
        << (a.out_of_band ? "true" : "false") << ',' << a.note << '\n';
  }
  return out.str();
}

namespace {

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

std::map<std::string, std::size_t> header_index(const std::vector<std::string>& header,
                                                std::initializer_list<const char*> required, const char* what) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < header.size(); ++i) idx[header[i]] = i;
  for (const char* col : required) {
    if (!idx.count(col)) throw FormatError(std::string(what) + ": missing column '" + col + "'");
  }
  return idx;
}

}  // namespace

std::vector<ScorePair> parse_score_pairs(const std::string& text) {
  const auto rows = csv_rows(text);
  if (rows.empty()) throw FormatError("score file: empty");
  auto idx = header_index(rows[0], {"image_id", "condition", "expert_score", "ai_score"}, "score file");
  std::vector<ScorePair> out;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string ctx = "score file row " + std::to_string(r + 1);
    if (row.size() != rows[0].size()) throw FormatError(ctx + ": expected " + std::to_string(rows[0].size()) + " fields");
    ScorePair p;
    p.image_id = row[idx["image_id"]];
    if (p.image_id.empty()) throw FormatError(ctx + ": empty image_id");
    if (!seen.insert(p.image_id).second) throw FormatError(ctx + ": duplicate image_id '" + p.image_id + "'");
    try {
      p.condition = condition_from_string(row[idx["condition"]]);
    } catch (const Error& e) {
      throw FormatError(ctx + ": " + e.what());
    }
    p.expert = parse_number(row[idx["expert_score"]], ctx + " expert_score");
    p.ai = parse_number(row[idx["ai_score"]], ctx + " ai_score");
    for (double v : {p.expert, p.ai}) {
      if (v < 0 || v > kMaxFigureScore) throw FormatError(ctx + ": score " + format_double(v) + " outside [0, 36]");
    }
    out.push_back(p);
  }
  return out;
}

std::vector<ScorePair> load_score_pairs(const std::filesystem::path& path) {
  return parse_score_pairs(read_text_file(path));
}

std::vector<Correction> parse_corrections(const std::string& text) {
  const auto rows = csv_rows(text);
  if (rows.empty()) throw FormatError("corrections file: empty");
  auto idx = header_index(rows[0], {"image_id", "corrected_score"}, "corrections file");
  std::vector<Correction> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string ctx = "corrections file row " + std::to_string(r + 1);
    if (row.size() != rows[0].size()) throw FormatError(ctx + ": expected " + std::to_string(rows[0].size()) + " fields");
    Correction c;
    c.image_id = row[idx["image_id"]];
    c.corrected_score = parse_number(row[idx["corrected_score"]], ctx + " corrected_score");
    if (idx.count("note")) c.note = row[idx["note"]];
    out.push_back(c);
  }
  return out;
}

std::vector<Correction> load_corrections(const std::filesystem::path& path) {
  return parse_corrections(read_text_file(path));
}

std::vector<ScorePair> score_pairs_from_manifest(const CohortManifest& manifest) {
  std::vector<ScorePair> out;
  for (const auto& r : manifest.records) {
    if (!r.expert_scores || !r.ai_scores) continue;
    for (Condition c : kConditions) out.push_back({image_id(r.subject_id, c), c, (*r.expert_scores)[c], (*r.ai_scores)[c]});
  }
  return out;
}

}  // namespace mstream

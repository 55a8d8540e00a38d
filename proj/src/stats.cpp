#include "mstream/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include "mstream/config.hpp"
#include "mstream/errors.hpp"

namespace mstream {

MeanSd mean_sd(const std::vector<double>& values) {
  if (values.size() < 2) throw StatisticsError("need at least two values, got " + std::to_string(values.size()));
  MeanSd out;
  out.n = values.size();
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(out.n);
  double ss = 0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(out.n - 1));
  return out;
}

TestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  const auto x = mean_sd(a), y = mean_sd(b);
  const double va = x.sd * x.sd / static_cast<double>(x.n), vb = y.sd * y.sd / static_cast<double>(y.n);
  TestResult r;
  const double diff = x.mean - y.mean;
  if (va + vb == 0) {
    // Both samples constant.
    r.statistic = diff == 0 ? 0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.df = static_cast<double>(x.n + y.n - 2);
    r.p = diff == 0 ? 1 : 0;
    return r;
  }
  r.statistic = diff / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) /
         (va * va / static_cast<double>(x.n - 1) + vb * vb / static_cast<double>(y.n - 1));
  boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic))));
  return r;
}

TestResult chi_square_2x2(double a, double b, double c, double d) {
  TestResult r;
  r.df = 1;
  const double n = a + b + c + d;
  const double rows[2] = {a + b, c + d}, cols[2] = {a + c, b + d};
  if (rows[0] == 0 || rows[1] == 0 || cols[0] == 0 || cols[1] == 0) {
    r.statistic = 0;
    r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const double obs[2][2] = {{a, b}, {c, d}};
  double chi = 0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double e = rows[i] * cols[j] / n;
      chi += (obs[i][j] - e) * (obs[i][j] - e) / e;
    }
  }
  r.statistic = chi;
  r.p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), chi));
  return r;
}

namespace {

using Extractor = std::function<std::optional<double>(const SubjectRecord&)>;

std::optional<GroupRow> continuous_row(const std::string& field, const std::vector<const SubjectRecord*> groups[2],
                                       const Extractor& get) {
  std::vector<double> values[2];
  for (int g = 0; g < 2; ++g) {
    for (const auto* r : groups[g]) {
      if (auto v = get(*r)) values[g].push_back(*v);
    }
  }
  if (values[0].size() < 2 || values[1].size() < 2) return std::nullopt;
  GroupRow row;
  row.field = field;
  for (int g = 0; g < 2; ++g) row.group[g] = mean_sd(values[g]);
  row.test = welch_t_test(values[0], values[1]);
  return row;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string fmt_p(double p) {
  if (std::isnan(p)) return "n/a";
  if (p < 0.001) return "<0.001";
  return fmt("%.3f", p);
}

}  // namespace

GroupSummary group_summary(const std::vector<SubjectRecord>& records, const std::string& group_field) {
  GroupSummary s;
  s.group_field = group_field;
  std::vector<const SubjectRecord*> groups[2];
  std::function<bool(const SubjectRecord&)> level;  // categorical comparison field
  std::string level_name;
  if (group_field == "label") {
    s.group_names[0] = "CN";
    s.group_names[1] = "MCI";
    for (const auto& r : records) groups[r.label == Label::mci ? 1 : 0].push_back(&r);
    level = [](const SubjectRecord& r) { return r.demographics.sex == Sex::female; };
    level_name = "sex (female)";
  } else if (group_field == "sex") {
    s.group_names[0] = "female";
    s.group_names[1] = "male";
    for (const auto& r : records) groups[r.demographics.sex == Sex::female ? 0 : 1].push_back(&r);
    level = [](const SubjectRecord& r) { return r.label == Label::mci; };
    level_name = "label (MCI)";
  } else {
    throw ConfigError("group_summary: unknown group field '" + group_field + "' (expected label or sex)");
  }
  for (int g = 0; g < 2; ++g) {
    s.n[g] = groups[g].size();
    if (groups[g].size() < 2) {
      throw StatisticsError("group " + s.group_names[g] + " has " + std::to_string(groups[g].size()) +
                            " subjects; at least two are needed");
    }
  }

  const std::pair<std::string, Extractor> fields[] = {
      {"age", [](const SubjectRecord& r) { return std::optional<double>(r.demographics.age); }},
      {"education", [](const SubjectRecord& r) { return std::optional<double>(r.demographics.education); }},
      {"mmse", [](const SubjectRecord& r) { return r.mmse; }},
      {"expert_copy", [](const SubjectRecord& r) { return r.expert_scores ? std::optional(r.expert_scores->copy) : std::nullopt; }},
      {"expert_imm", [](const SubjectRecord& r) { return r.expert_scores ? std::optional(r.expert_scores->immediate) : std::nullopt; }},
      {"expert_del", [](const SubjectRecord& r) { return r.expert_scores ? std::optional(r.expert_scores->delayed) : std::nullopt; }},
      {"ai_copy", [](const SubjectRecord& r) { return r.ai_scores ? std::optional(r.ai_scores->copy) : std::nullopt; }},
      {"ai_imm", [](const SubjectRecord& r) { return r.ai_scores ? std::optional(r.ai_scores->immediate) : std::nullopt; }},
      {"ai_del", [](const SubjectRecord& r) { return r.ai_scores ? std::optional(r.ai_scores->delayed) : std::nullopt; }},
  };
  for (const auto& [name, get] : fields) {
    if (auto row = continuous_row(name, groups, get)) s.rows.push_back(*row);
  }

  GroupRow cat;
  cat.field = level_name;
  cat.categorical = true;
  for (int g = 0; g < 2; ++g) {
    cat.total[g] = groups[g].size();
    for (const auto* r : groups[g]) cat.count[g] += level(*r) ? 1 : 0;
  }
  cat.test = chi_square_2x2(static_cast<double>(cat.count[0]), static_cast<double>(cat.total[0] - cat.count[0]),
                            static_cast<double>(cat.count[1]), static_cast<double>(cat.total[1] - cat.count[1]));
  s.rows.insert(s.rows.begin() + std::min<std::size_t>(1, s.rows.size()), cat);
  return s;
}

std::string GroupSummary::to_csv() const {
  std::ostringstream out;
  out << "field,group,n,mean,sd,count,percent,statistic,p\n";
  for (const auto& row : rows) {
    for (int g = 0; g < 2; ++g) {
      out << row.field << ',' << group_names[g] << ',';
      if (row.categorical) {
        const double pct = 100.0 * static_cast<double>(row.count[g]) / static_cast<double>(row.total[g]);
        out << row.total[g] << ",,," << row.count[g] << ',' << format_double(pct);
      } else {
        out << row.group[g].n << ',' << format_double(row.group[g].mean) << ',' << format_double(row.group[g].sd)
            << ",,";
      }
      out << ',' << format_double(row.test.statistic) << ',' << (std::isnan(row.test.p) ? "nan" : format_double(row.test.p))
          << '\n';
    }
  }
  return out.str();
}

std::string GroupSummary::to_text() const {
  std::ostringstream out;
  char head[160];
  std::snprintf(head, sizeof head, "%-16s %-22s %-22s %s\n", "", (group_names[0] + " (n=" + std::to_string(n[0]) + ")").c_str(),
                (group_names[1] + " (n=" + std::to_string(n[1]) + ")").c_str(), "p");
  out << head;
  for (const auto& row : rows) {
    std::string cells[2];
    for (int g = 0; g < 2; ++g) {
      if (row.categorical) {
        const double pct = 100.0 * static_cast<double>(row.count[g]) / static_cast<double>(row.total[g]);
        cells[g] = std::to_string(row.count[g]) + " (" + fmt("%.1f", pct) + "%)";
      } else {
        cells[g] = fmt("%.1f", row.group[g].mean) + " (" + fmt("%.1f", row.group[g].sd) + ")";
      }
    }
    char line[200];
    std::snprintf(line, sizeof line, "%-16s %-22s %-22s %s\n", row.field.c_str(), cells[0].c_str(), cells[1].c_str(),
                  fmt_p(row.test.p).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace mstream

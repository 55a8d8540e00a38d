#pragma once

#include <string>
#include <vector>

#include "mstream/manifest.hpp"

namespace mstream {

struct MeanSd {
  std::size_t n = 0;
  double mean = 0;
  double sd = 0;  // sample (n - 1)
};

// Throws StatisticsError for n < 2.
MeanSd mean_sd(const std::vector<double>& values);

struct TestResult {
  double statistic = 0;
  double df = 0;
  double p = 1;
};

// Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom.
TestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Pearson chi-square on a 2x2 table without continuity correction (1 df).
// p is NaN when a row or column total is zero.
TestResult chi_square_2x2(double a, double b, double c, double d);

struct GroupRow {
  std::string field;
  bool categorical = false;
  MeanSd group[2];                 // continuous
  std::size_t count[2] = {0, 0};   // categorical: count of the level
  std::size_t total[2] = {0, 0};
  TestResult test;
};

struct GroupSummary {
  std::string group_field;
  std::string group_names[2];
  std::size_t n[2] = {0, 0};
  std::vector<GroupRow> rows;

  // field,group,n,mean,sd,count,percent,statistic,p
  std::string to_csv() const;
  std::string to_text() const;
};

// Descriptive table comparing two groups of subjects. group_field is
// "label" (CN vs MCI; sex compared by chi-square) or "sex" (female vs male;
// label compared by chi-square). Continuous fields: age, education, and
// mmse / expert / AI scores over the subjects that carry them (a field is
// left out when either group has fewer than two values). Throws
// StatisticsError when a group has fewer than two subjects.
GroupSummary group_summary(const std::vector<SubjectRecord>& records, const std::string& group_field = "label");

}  // namespace mstream

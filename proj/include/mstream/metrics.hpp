#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mstream/errors.hpp"

namespace mstream {

// Labels are 1 for MCI (positive) and 0 for CN.

// Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly,
// ties counting one half. Computed from integer (doubled) rank sums so the
// result equals exhaustive pair counting exactly.
double auc(std::span<const double> scores, std::span<const int> labels);

struct ClassMetrics {
  double acc = 0;
  double sen = 0;
  double spe = 0;
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
};

// Positive iff score >= threshold.
ClassMetrics compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold);

struct RocCurve {
  // thresholds[0] is +inf (nothing predicted positive); points follow in
  // order of decreasing threshold, so fpr and tpr never decrease.
  std::vector<double> thresholds;
  std::vector<double> fpr;
  std::vector<double> tpr;

  double area() const;  // trapezoid rule
  // threshold,fpr,tpr
  std::string to_csv() const;
};

RocCurve roc_points(std::span<const double> scores, std::span<const int> labels);

// Linear-interpolation percentile (q in [0, 1]) of the sorted sample,
// position (n - 1) q.
double percentile(std::vector<double> values, double q);

struct Interval {
  double mean = 0;
  double lower = 0;
  double upper = 0;
};

// Mean with the 2.5 / 97.5 percentile band.
Interval percentile_interval(const std::vector<double>& values);

// "0.852 [0.837-0.869]"
std::string format_interval(const Interval& interval);

}  // namespace mstream

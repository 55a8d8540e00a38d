#include "mstream/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mstream/config.hpp"

namespace mstream {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, std::size_t& pos, std::size_t& neg) {
  if (scores.size() != labels.size()) throw ContractError("metrics: score and label counts differ");
  pos = neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) {
      ++pos;
    } else if (labels[i] == 0) {
      ++neg;
    } else {
      throw ContractError("metrics: labels must be 0 or 1");
    }
    if (std::isnan(scores[i])) throw NumericError("metrics: NaN score at index " + std::to_string(i));
  }
  if (pos == 0 || neg == 0) throw MetricError("metric undefined: only one class present");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_inputs(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Doubled average rank of a tie block occupying 1-based ranks i..j is i + j.
  unsigned long long rank_sum2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const unsigned long long r2 = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum2 += r2;
    }
    i = j + 1;
  }
  const unsigned long long u2 = rank_sum2 - static_cast<unsigned long long>(pos) * (pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

ClassMetrics compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  std::size_t pos = 0, neg = 0;
  check_inputs(scores, labels, pos, neg);
  ClassMetrics m;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      predicted ? ++m.tp : ++m.fn;
    } else {
      predicted ? ++m.fp : ++m.tn;
    }
  }
  m.sen = static_cast<double>(m.tp) / static_cast<double>(pos);
  m.spe = static_cast<double>(m.tn) / static_cast<double>(neg);
  m.acc = static_cast<double>(m.tp + m.tn) / static_cast<double>(scores.size());
  return m;
}

RocCurve roc_points(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_inputs(scores, labels, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.fpr.push_back(0);
  roc.tpr.push_back(0);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      labels[order[i]] == 1 ? ++tp : ++fp;
      ++i;
    }
    roc.thresholds.push_back(s);
    roc.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    roc.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
  }
  return roc;
}

double RocCurve::area() const {
  double a = 0;
  for (std::size_t i = 1; i < fpr.size(); ++i) a += (fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) / 2.0;
  return a;
}

std::string RocCurve::to_csv() const {
  std::ostringstream out;
  out << "threshold,fpr,tpr\n";
  for (std::size_t i = 0; i < fpr.size(); ++i) {
    out << (std::isinf(thresholds[i]) ? std::string("inf") : format_double(thresholds[i])) << ','
        << format_double(fpr[i]) << ',' << format_double(tpr[i]) << '\n';
  }
  return out.str();
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile of an empty sample");
  if (!(q >= 0 && q <= 1)) throw ContractError("percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Interval percentile_interval(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("interval of an empty sample");
  Interval out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  out.lower = percentile(values, 0.025);
  out.upper = percentile(values, 0.975);
  // Summation rounding would otherwise leave a constant sample's mean a hair
  // off its value.
  if (out.lower == out.upper && *std::min_element(values.begin(), values.end()) == out.lower &&
      *std::max_element(values.begin(), values.end()) == out.upper) {
    out.mean = out.lower;
  }
  return out;
}

std::string format_interval(const Interval& interval) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f [%.3f-%.3f]", interval.mean, interval.lower, interval.upper);
  return buf;
}

}  // namespace mstream

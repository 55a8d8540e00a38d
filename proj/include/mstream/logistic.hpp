#pragma once

#include <span>
#include <string>
#include <vector>

#include "mstream/config.hpp"
#include "mstream/errors.hpp"

namespace mstream {

// Row-major n x d design matrix with per-column metadata.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<std::string> names;
  std::vector<bool> continuous;  // z-scored before fitting; others used as-is

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  void add_row(std::span<const double> values);
};

struct LogisticOptions {
  double l2 = 1e-4;
  int max_iter = 100;
  double tol = 1e-8;

  static LogisticOptions from_config(const Config& cfg);
  void write(Config& cfg) const;
};

struct LogisticModel {
  std::vector<std::string> feature_names;
  std::vector<double> coef;  // on the normalized scale
  double intercept = 0;
  std::vector<double> mean;  // 0 for non-continuous columns
  std::vector<double> sd;    // 1 for non-continuous columns
  bool converged = false;
  int iterations = 0;
  // Penalized mean log-likelihood after each accepted step (first entry at
  // the starting point).
  std::vector<double> objective_trace;

  // sigmoid(intercept + coef . normalize(x)).
  double predict(std::span<const double> x) const;
  // Coefficients and intercept on the original feature scale.
  std::vector<double> raw_coef() const;
  double raw_intercept() const;
  // feature,coefficient,mean,sd with an "(intercept)" row first.
  std::string coefficients_csv() const;
};

// Newton / IRLS on the mean log-likelihood minus (l2 / 2) |coef|^2; the
// intercept is not penalized. A step that lowers the objective is halved
// until it does not. Converged when the largest coefficient change falls
// below tol; running out of iterations raises NumericError, as does a
// singular Hessian.
LogisticModel logistic_fit(const FeatureMatrix& x, const std::vector<int>& y, const LogisticOptions& options = {});

}  // namespace mstream

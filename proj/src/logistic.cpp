#include "mstream/logistic.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "mstream/errors.hpp"

namespace mstream {

void FeatureMatrix::add_row(std::span<const double> values) {
  if (values.size() != cols) throw ContractError("FeatureMatrix: row has " + std::to_string(values.size()) +
                                                 " values, expected " + std::to_string(cols));
  data.insert(data.end(), values.begin(), values.end());
  ++rows;
}

LogisticOptions LogisticOptions::from_config(const Config& cfg) {
  LogisticOptions o;
  o.l2 = cfg.get_double("logistic", "l2", o.l2);
  o.max_iter = cfg.get_int("logistic", "max_iter", o.max_iter);
  o.tol = cfg.get_double("logistic", "tol", o.tol);
  if (o.l2 < 0 || o.max_iter < 1 || !(o.tol > 0)) throw ConfigError("logistic: l2 >= 0, max_iter >= 1, tol > 0 required");
  return o;
}

void LogisticOptions::write(Config& cfg) const {
  cfg.set("logistic", "l2", format_double(l2));
  cfg.set("logistic", "max_iter", std::to_string(max_iter));
  cfg.set("logistic", "tol", format_double(tol));
}

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double LogisticModel::predict(std::span<const double> x) const {
  if (x.size() != coef.size()) {
    throw ContractError("logistic_predict: " + std::to_string(x.size()) + " features given, model has " +
                        std::to_string(coef.size()));
  }
  double z = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) z += coef[j] * (x[j] - mean[j]) / sd[j];
  return sigmoid(z);
}

std::vector<double> LogisticModel::raw_coef() const {
  std::vector<double> out(coef.size());
  for (std::size_t j = 0; j < coef.size(); ++j) out[j] = coef[j] / sd[j];
  return out;
}

double LogisticModel::raw_intercept() const {
  double b = intercept;
  for (std::size_t j = 0; j < coef.size(); ++j) b -= coef[j] * mean[j] / sd[j];
  return b;
}

std::string LogisticModel::coefficients_csv() const {
  std::ostringstream out;
  out << "feature,coefficient,mean,sd\n(intercept)," << format_double(intercept) << ",,\n";
  for (std::size_t j = 0; j < coef.size(); ++j) {
    out << feature_names[j] << ',' << format_double(coef[j]) << ',' << format_double(mean[j]) << ','
        << format_double(sd[j]) << '\n';
  }
  return out.str();
}

LogisticModel logistic_fit(const FeatureMatrix& x, const std::vector<int>& y, const LogisticOptions& o) {
  const std::size_t n = x.rows, d = x.cols;
  if (y.size() != n) throw ContractError("logistic_fit: label count differs from row count");
  if (x.data.size() != n * d) throw ContractError("logistic_fit: matrix storage does not match its shape");
  if (n <= d) throw ContractError("logistic_fit: need more rows than features");
  std::size_t pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw ContractError("logistic_fit: labels must be 0 or 1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos == 0 || pos == n) throw ContractError("logistic_fit: both classes must be present");

  LogisticModel m;
  m.feature_names = x.names;
  m.feature_names.resize(d);
  m.mean.assign(d, 0.0);
  m.sd.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    if (j < x.continuous.size() && !x.continuous[j]) continue;
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < n; ++i) s += x.data[i * d + j];
    const double mu = s / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) ss += (x.data[i * d + j] - mu) * (x.data[i * d + j] - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    m.mean[j] = mu;
    m.sd[j] = sd > 1e-12 ? sd : 1.0;
  }

  // Column 0 is the intercept.
  Eigen::MatrixXd z(n, d + 1);
  Eigen::VectorXd t(n);
  for (std::size_t i = 0; i < n; ++i) {
    z(i, 0) = 1.0;
    for (std::size_t j = 0; j < d; ++j) z(i, j + 1) = (x.data[i * d + j] - m.mean[j]) / m.sd[j];
    t(i) = y[i];
  }
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, o.l2);
  penalty(0) = 0;
  const double inv_n = 1.0 / static_cast<double>(n);

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = z * beta;
    double ll = 0;
    for (std::size_t i = 0; i < n; ++i) ll += t(i) * eta(i) - softplus(eta(i));
    return ll * inv_n - 0.5 * beta.cwiseProduct(penalty).dot(beta);
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  double f = objective(beta);
  m.objective_trace.push_back(f);
  for (int it = 1; it <= o.max_iter; ++it) {
    const Eigen::VectorXd eta = z * beta;
    Eigen::VectorXd p(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      p(i) = sigmoid(eta(i));
      w(i) = p(i) * (1 - p(i));
    }
    const Eigen::VectorXd grad = z.transpose() * (t - p) * inv_n - penalty.cwiseProduct(beta);
    Eigen::MatrixXd h = z.transpose() * w.asDiagonal() * z * inv_n;
    h.diagonal() += penalty;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    const auto diag = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || diag.minCoeff() <= 1e-13 * std::max(1.0, diag.maxCoeff())) {
      throw NumericError("logistic_fit: singular Hessian at iteration " + std::to_string(it) +
                         " (collinear or constant features?)");
    }
    Eigen::VectorXd step = ldlt.solve(grad);
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    double f_next = objective(next);
    for (int halving = 0; f_next < f && halving < 40; ++halving) {
      scale *= 0.5;
      next = beta + scale * step;
      f_next = objective(next);
    }
    if (f_next < f) {
      // No ascent along the Newton direction: already at the optimum up to rounding.
      next = beta;
      f_next = f;
    }
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    f = f_next;
    m.objective_trace.push_back(f);
    m.iterations = it;
    if (!std::isfinite(f) || !beta.allFinite()) throw NumericError("logistic_fit: non-finite coefficients");
    if (change < o.tol) {
      m.converged = true;
      break;
    }
  }
  if (!m.converged) {
    throw NumericError("logistic_fit: no convergence after " + std::to_string(o.max_iter) +
                       " iterations (perfectly separated data needs l2 > 0)");
  }
  m.intercept = beta(0);
  m.coef.assign(beta.data() + 1, beta.data() + 1 + d);
  return m;
}

}  // namespace mstream

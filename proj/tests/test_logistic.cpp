#include <cmath>
#include <random>

#include "doctest.h"
#include "mstream/logistic.hpp"

using namespace mstream;

namespace {

FeatureMatrix matrix(std::size_t cols) {
  FeatureMatrix x;
  x.cols = cols;
  for (std::size_t j = 0; j < cols; ++j) {
    x.names.push_back("x" + std::to_string(j + 1));
    x.continuous.push_back(true);
  }
  return x;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("logistic fit recovers planted coefficients") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  auto x = matrix(2);
  std::vector<int> y;
  for (int i = 0; i < 5000; ++i) {
    const double a = nd(rng), b = nd(rng);
    x.add_row(std::vector<double>{a, b});
    y.push_back(u(rng) < sigmoid(1.0 * a - 0.5 * b) ? 1 : 0);
  }
  auto m = logistic_fit(x, y);
  CHECK(m.converged);
  const auto beta = m.raw_coef();
  CHECK(std::abs(beta[0] - 1.0) < 0.1);
  CHECK(std::abs(beta[1] + 0.5) < 0.1);
  CHECK(std::abs(m.raw_intercept()) < 0.1);
  for (std::size_t k = 1; k < m.objective_trace.size(); ++k) CHECK(m.objective_trace[k] >= m.objective_trace[k - 1]);
  CHECK(m.coefficients_csv().rfind("feature,coefficient,mean,sd\n(intercept),", 0) == 0);
}

TEST_CASE("logistic fit on independent labels") {
  SUBCASE("exactly independent design gives zero coefficients") {
    // Every feature row appears once with each label.
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0, 1);
    auto x = matrix(3);
    std::vector<int> y;
    for (int i = 0; i < 300; ++i) {
      std::vector<double> row{nd(rng), nd(rng), nd(rng)};
      x.add_row(row);
      x.add_row(row);
      y.push_back(0);
      y.push_back(1);
    }
    auto m = logistic_fit(x, y);
    for (double c : m.coef) CHECK(std::abs(c) < 1e-2);
    CHECK(std::abs(m.intercept) < 1e-2);
  }
  SUBCASE("random independent labels at large n") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd(0, 1);
    auto x = matrix(2);
    std::vector<int> y;
    for (int i = 0; i < 100000; ++i) {
      x.add_row(std::vector<double>{nd(rng), nd(rng)});
      y.push_back(static_cast<int>(rng() % 2));
    }
    auto m = logistic_fit(x, y);
    for (double c : m.coef) CHECK(std::abs(c) < 0.02);
    CHECK(std::abs(m.intercept) < 0.02);
  }
}

TEST_CASE("logistic fit edge cases") {
  SUBCASE("separated single feature") {
    auto x = matrix(1);
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) {
      x.add_row(std::vector<double>{i % 2 ? 1.0 : -1.0});
      y.push_back(i % 2);
    }
    auto m = logistic_fit(x, y);
    CHECK(m.coef[0] > 0);
    CHECK(m.predict(std::vector<double>{1.0}) > 0.99);
    LogisticOptions none;
    none.l2 = 0;
    CHECK_THROWS_AS(logistic_fit(x, y, none), NumericError);
  }
  SUBCASE("collinear columns without penalty") {
    auto x = matrix(2);
    std::vector<int> y;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0, 1);
    for (int i = 0; i < 50; ++i) {
      const double a = nd(rng);
      x.add_row(std::vector<double>{a, 2 * a});
      y.push_back(i % 2);
    }
    LogisticOptions none;
    none.l2 = 0;
    CHECK_THROWS_AS(logistic_fit(x, y, none), NumericError);
  }
  SUBCASE("preconditions") {
    auto x = matrix(1);
    x.add_row(std::vector<double>{1});
    x.add_row(std::vector<double>{2});
    CHECK_THROWS_AS(logistic_fit(x, {1, 1}), ContractError);
    CHECK_THROWS_AS(logistic_fit(x, {1}), ContractError);
    CHECK_THROWS_AS(x.add_row(std::vector<double>{1, 2}), ContractError);
  }
  SUBCASE("non-continuous columns are left unscaled") {
    auto x = matrix(2);
    x.continuous[1] = false;
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd(10, 3);
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
      x.add_row(std::vector<double>{nd(rng), static_cast<double>(i % 2)});
      y.push_back(rng() % 3 == 0);
    }
    auto m = logistic_fit(x, y);
    CHECK(m.mean[1] == 0);
    CHECK(m.sd[1] == 1);
    CHECK(m.mean[0] == doctest::Approx(10).epsilon(0.1));
  }
}

TEST_CASE("logistic predict") {
  LogisticModel m;
  m.coef = {0, 0};
  m.mean = {0, 0};
  m.sd = {1, 1};
  CHECK(m.predict(std::vector<double>{3, -2}) == 0.5);
  m.intercept = 30;
  CHECK(m.predict(std::vector<double>{0, 0}) > 1 - 1e-9);
  CHECK_THROWS_AS(m.predict(std::vector<double>{1}), ContractError);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    m.coef = {nd(rng), nd(rng)};
    m.mean = {nd(rng), nd(rng)};
    m.sd = {1 + std::abs(nd(rng)), 1 + std::abs(nd(rng))};
    m.intercept = nd(rng);
    const std::vector<double> x{nd(rng), nd(rng)};
    const double z = m.intercept + m.coef[0] * (x[0] - m.mean[0]) / m.sd[0] + m.coef[1] * (x[1] - m.mean[1]) / m.sd[1];
    CHECK(m.predict(x) == doctest::Approx(1 / (1 + std::exp(-z))).epsilon(1e-14));
    // Monotone in each feature with the sign of its coefficient.
    for (std::size_t j = 0; j < 2; ++j) {
      auto up = x;
      up[j] += 0.5;
      if (m.coef[j] > 0) CHECK(m.predict(up) > m.predict(x));
      if (m.coef[j] < 0) CHECK(m.predict(up) < m.predict(x));
    }
  }
}

TEST_CASE("logistic fit is deterministic") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 1);
  auto x = matrix(2);
  std::vector<int> y;
  for (int i = 0; i < 300; ++i) {
    x.add_row(std::vector<double>{nd(rng), nd(rng)});
    y.push_back(i % 3 == 0);
  }
  CHECK(logistic_fit(x, y).coefficients_csv() == logistic_fit(x, y).coefficients_csv());
}

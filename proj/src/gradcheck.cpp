#include "mstream/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mstream {

double grad_check(const ScalarFunction& f, Tensor x, double eps) {
  if (!(eps > 0)) throw ContractError("grad_check: eps must be positive");
  if (!x.is_leaf()) throw ContractError("grad_check: x must be a leaf tensor");
  const bool had_flag = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f(x);
  if (y.numel() != 1) throw ContractError("grad_check: f must be scalar-valued, got " + shape_to_string(y.shape()));
  backward(y);
  const std::vector<double> analytic = x.grad_values();

  auto evaluate = [&] {
    NoGradGuard guard;
    Tensor v = f(x);
    if (v.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
    return v.item();
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double original = x.at(i);
    x.set(i, original + eps);
    const double plus = evaluate();
    x.set(i, original - eps);
    const double minus = evaluate();
    x.set(i, original);
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  x.zero_grad();
  x.set_requires_grad(had_flag);
  return worst;
}

}  // namespace mstream

#pragma once

#include <functional>

#include "mstream/tensor.hpp"

namespace mstream {

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Compares the autodiff gradient of a scalar-valued f at x against central
// differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). Returns the largest
// elementwise |a - n| / max(|a|, |n|, 1e-8). x is perturbed in place and
// restored; its grad is reset first.
double grad_check(const ScalarFunction& f, Tensor x, double eps = 1e-5);

}  // namespace mstream

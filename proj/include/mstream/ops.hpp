#pragma once

#include <span>
#include <vector>

#include "mstream/tensor.hpp"

namespace mstream {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
// Gradient passes where lo <= x <= hi and is zero elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);

// 2-D: (m x k)(k x n). 3-D lhs with 2-D rhs shares the rhs across the batch;
// 3-D with 3-D multiplies batch-wise.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

// Cross-correlation (no kernel flip) of input N x C x H x W with kernel
// O x (C/groups) x kh x kw.
Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions options = {});

enum class Mode { train, eval };

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool initialized() const { return running_mean.defined() && running_var.defined(); }
  static BatchNormState fresh(std::size_t channels, DType dtype);
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Per-channel normalization of N x C x H x W (or N x C). Train mode uses batch
// statistics and updates the running ones; with a single value per channel it
// falls back to the running statistics without updating them.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode);

Tensor softmax(const Tensor& x, int axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over the listed axes, which are removed from the result.
Tensor mean_axes(const Tensor& x, std::vector<int> axes);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::vector<std::size_t> order);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

}  // namespace mstream

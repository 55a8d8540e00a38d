#include "mstream/params.hpp"

#include <cmath>

#include "mstream/ops.hpp"

namespace mstream {

std::string to_string(ParamRole role) {
  switch (role) {
    case ParamRole::trainable:
      return "trainable";
    case ParamRole::frozen:
      return "frozen";
    case ParamRole::buffer:
      return "buffer";
  }
  return "unknown";
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng, DType dtype) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t = Tensor::zeros(std::move(shape), dtype, true);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  return t;
}

Dense Dense::init(std::size_t in, std::size_t out, Rng& rng, DType dtype) {
  return {he_normal({in, out}, in, rng, dtype), Tensor::zeros({out}, dtype, true)};
}

Tensor Dense::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Dense::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, ParamRole::trainable});
  out.push_back({prefix + ".bias", bias, ParamRole::trainable});
}

}  // namespace mstream

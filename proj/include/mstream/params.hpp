#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mstream/tensor.hpp"

namespace mstream {

// trainable: updated by the optimizer. frozen: scorer internals, never
// updated. buffer: non-learned state such as running statistics.
enum class ParamRole : std::uint8_t { trainable = 0, frozen = 1, buffer = 2 };

std::string to_string(ParamRole role);

struct NamedTensor {
  std::string name;
  Tensor tensor;
  ParamRole role;
};

using ParamList = std::vector<NamedTensor>;

using Rng = std::mt19937_64;

// He-style fan-in normal init: N(0, 2 / fan_in).
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng, DType dtype);

// Dense layer computing x W + b with W stored in x out.
struct Dense {
  Tensor weight;
  Tensor bias;

  static Dense init(std::size_t in, std::size_t out, Rng& rng, DType dtype);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace mstream

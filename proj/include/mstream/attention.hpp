#pragma once

// Multi-head self-attention over backbone tokens and the spatial stream
// that feeds three drawings through a shared backbone and attention layer.

#include <array>

#include "mstream/backbone.hpp"

namespace mstream {

struct AttentionConfig {
  std::size_t heads = 4;
  std::size_t fc1_width = 128;
  bool positional_encoding = false;

  static AttentionConfig from_config(const Config& cfg);
  void write(Config& cfg) const;
  void validate(std::size_t channels) const;
};

struct AttentionParams {
  std::size_t heads = 0;
  std::vector<Tensor> query;  // per head, C x d_k
  std::vector<Tensor> key;
  std::vector<Tensor> value;
  Tensor output;              // (h * d_k) x C

  static AttentionParams init(std::size_t channels, std::size_t heads, Rng& rng, DType dtype);
  std::size_t channels() const { return output.size(1); }
  std::size_t head_dim() const { return channels() / heads; }
  void collect(const std::string& prefix, ParamList& out) const;
};

// softmax(Q K^T / sqrt(d_k)) with the softmax over keys; T x T or B x T x T.
Tensor attention_weights(const Tensor& q, const Tensor& k);

// softmax(Q K^T / sqrt(d_k)) V for T x d_k (or B x T x d_k) operands.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Concat_i(Attention(X W_i^Q, X W_i^K, X W_i^V)) W^O for tokens X of shape
// T x C or B x T x C.
Tensor multi_head_attention(const Tensor& tokens, const AttentionParams& params);

// Fixed sinusoidal encoding over the flattened token index, T x C.
Tensor positional_encoding(std::size_t tokens, std::size_t channels, DType dtype);

struct SpatialHeadParams {
  Dense fc1;  // 3C -> width
  Dense fc2;  // width -> 2

  static SpatialHeadParams init(std::size_t in, std::size_t width, Rng& rng, DType dtype);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct SpatialStream {
  BackboneConfig backbone_config;
  AttentionConfig attention_config;
  BackboneParams backbone;
  AttentionParams attention;
  SpatialHeadParams head;

  static SpatialStream init(const BackboneConfig& bcfg, const AttentionConfig& acfg, Rng& rng, DType dtype);
  void collect(const std::string& prefix, ParamList& out) const;

  // images: (3N) x 1 x S x S, subject-major with conditions in the order
  // copy, immediate, delayed. Returns N x 2 class probabilities (CN, MCI).
  Tensor forward(const Tensor& images, Mode mode);

  // One subject: three 1 x S x S images in condition order.
  std::array<double, 2> forward_subject(const std::array<Tensor, 3>& images, Mode mode);
};

}  // namespace mstream

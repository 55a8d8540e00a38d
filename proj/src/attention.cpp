#include "mstream/attention.hpp"

#include <cmath>

namespace mstream {

AttentionConfig AttentionConfig::from_config(const Config& cfg) {
  AttentionConfig out;
  const int heads = cfg.get_int("attention", "heads", static_cast<int>(out.heads));
  const int width = cfg.get_int("attention", "fc1_width", static_cast<int>(out.fc1_width));
  if (heads < 1) throw ConfigError("[attention] heads must be at least 1");
  if (width < 1) throw ConfigError("[attention] fc1_width must be at least 1");
  out.heads = static_cast<std::size_t>(heads);
  out.fc1_width = static_cast<std::size_t>(width);
  out.positional_encoding = cfg.get_bool("attention", "positional_encoding", out.positional_encoding);
  return out;
}

void AttentionConfig::write(Config& cfg) const {
  cfg.set("attention", "heads", std::to_string(heads));
  cfg.set("attention", "fc1_width", std::to_string(fc1_width));
  cfg.set("attention", "positional_encoding", positional_encoding ? "true" : "false");
}

void AttentionConfig::validate(std::size_t channels) const {
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("attention: " + std::to_string(channels) + " channels are not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

AttentionParams AttentionParams::init(std::size_t channels, std::size_t heads, Rng& rng, DType dtype) {
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("attention: " + std::to_string(channels) + " channels are not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dk = channels / heads;
  AttentionParams p;
  p.heads = heads;
  for (std::size_t i = 0; i < heads; ++i) {
    p.query.push_back(he_normal({channels, dk}, channels, rng, dtype));
    p.key.push_back(he_normal({channels, dk}, channels, rng, dtype));
    p.value.push_back(he_normal({channels, dk}, channels, rng, dtype));
  }
  p.output = he_normal({heads * dk, channels}, heads * dk, rng, dtype);
  return p;
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < heads; ++i) {
    const std::string h = prefix + ".head" + std::to_string(i);
    out.push_back({h + ".query", query[i], ParamRole::trainable});
    out.push_back({h + ".key", key[i], ParamRole::trainable});
    out.push_back({h + ".value", value[i], ParamRole::trainable});
  }
  out.push_back({prefix + ".output", output, ParamRole::trainable});
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.dim() != k.dim() || (q.dim() != 2 && q.dim() != 3)) {
    throw DimensionError("attention: Q and K must both be T x d_k or B x T x d_k");
  }
  if (q.shape().back() != k.shape().back()) {
    throw DimensionError("attention: d_k mismatch between " + shape_to_string(q.shape()) + " and " +
                         shape_to_string(k.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  return softmax(mul_scalar(matmul(q, transpose(k)), scale), -1);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (k.shape() != v.shape() || q.dim() != k.dim() || q.shape()[q.dim() - 2] != k.shape()[k.dim() - 2]) {
    throw DimensionError("attention: Q, K, V shapes disagree (" + shape_to_string(q.shape()) + ", " +
                         shape_to_string(k.shape()) + ", " + shape_to_string(v.shape()) + ")");
  }
  return matmul(attention_weights(q, k), v);
}

Tensor multi_head_attention(const Tensor& tokens, const AttentionParams& params) {
  const std::size_t c = tokens.shape().back();
  if (params.heads == 0 || c % params.heads != 0 || params.output.size(1) != c) {
    throw ConfigError("multi_head_attention: token width " + std::to_string(c) + " incompatible with " +
                      std::to_string(params.heads) + " heads");
  }
  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  for (std::size_t i = 0; i < params.heads; ++i) {
    heads.push_back(scaled_dot_attention(matmul(tokens, params.query[i]), matmul(tokens, params.key[i]),
                                         matmul(tokens, params.value[i])));
  }
  return matmul(concat(heads, -1), params.output);
}

Tensor positional_encoding(std::size_t tokens, std::size_t channels, DType dtype) {
  std::vector<double> pe(tokens * channels);
  for (std::size_t p = 0; p < tokens; ++p) {
    for (std::size_t i = 0; i < channels; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(i - i % 2) / static_cast<double>(channels));
      const double angle = static_cast<double>(p) / rate;
      pe[p * channels + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({tokens, channels}, pe, dtype);
}

SpatialHeadParams SpatialHeadParams::init(std::size_t in, std::size_t width, Rng& rng, DType dtype) {
  return {Dense::init(in, width, rng, dtype), Dense::init(width, 2, rng, dtype)};
}

void SpatialHeadParams::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

SpatialStream SpatialStream::init(const BackboneConfig& bcfg, const AttentionConfig& acfg, Rng& rng, DType dtype) {
  bcfg.validate();
  const std::size_t c = bcfg.out_channels();
  acfg.validate(c);
  SpatialStream s;
  s.backbone_config = bcfg;
  s.attention_config = acfg;
  s.backbone = BackboneParams::init(bcfg, rng, dtype);
  s.attention = AttentionParams::init(c, acfg.heads, rng, dtype);
  s.head = SpatialHeadParams::init(3 * c, acfg.fc1_width, rng, dtype);
  return s;
}

void SpatialStream::collect(const std::string& prefix, ParamList& out) const {
  backbone.collect(prefix + ".backbone", out);
  attention.collect(prefix + ".attention", out);
  head.collect(prefix + ".head", out);
}

Tensor SpatialStream::forward(const Tensor& images, Mode mode) {
  if (images.dim() != 4 || images.size(0) % 3 != 0) {
    throw DimensionError("spatial stream expects (3N) x 1 x S x S images, got " + shape_to_string(images.shape()));
  }
  const std::size_t subjects = images.size(0) / 3;
  Tensor tokens = flatten_tokens_batch(backbone_features(images, backbone_config, backbone, mode));
  if (attention_config.positional_encoding) {
    tokens = add(tokens, positional_encoding(tokens.size(1), tokens.size(2), tokens.dtype()));
  }
  Tensor attended = multi_head_attention(tokens, attention);  // (3N) x T x C
  Tensor pooled = mean_axes(attended, {1});                   // (3N) x C
  Tensor joined = reshape(pooled, {subjects, 3 * pooled.size(1)});
  return softmax(head.fc2(silu(head.fc1(joined))), 1);
}

std::array<double, 2> SpatialStream::forward_subject(const std::array<Tensor, 3>& images, Mode mode) {
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!images[i].defined()) throw DataError("missing " + to_string(kConditions[i]) + " image");
    const auto& s = images[i].shape();
    if (s.size() != 3 || s[0] != 1) throw DimensionError("spatial stream images must be 1 x S x S");
    parts.push_back(reshape(images[i], {1, 1, s[1], s[2]}));
  }
  Tensor p = forward(concat(parts, 0), mode);
  return {p.at(0), p.at(1)};
}

}  // namespace mstream

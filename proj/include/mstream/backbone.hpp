#pragma once

// EfficientNet-style convolutional backbone: a 3x3 stride-2 stem followed by
// stages of mobile inverted bottleneck (MBConv) blocks with squeeze-excite.

#include <string>
#include <vector>

#include "mstream/config.hpp"
#include "mstream/domain.hpp"
#include "mstream/ops.hpp"
#include "mstream/params.hpp"

namespace mstream {

struct StageConfig {
  std::size_t expansion = 1;
  std::size_t kernel = 3;  // 3 or 5
  std::size_t stride = 1;  // 1 or 2
  std::size_t out_channels = 0;
  std::size_t repeats = 1;
};

struct BackboneConfig {
  std::size_t input_size = 64;
  std::size_t stem_channels = 8;
  std::vector<StageConfig> stages;
  double se_ratio = 0.25;

  // 64x64 input, four single-block stages, 32 x 4 x 4 feature map.
  static BackboneConfig desk();
  // EfficientNet-B2 stage layout at 512x512 input, 352 x 16 x 16 feature map.
  static BackboneConfig b2_shape();

  // Reads [backbone]: preset = desk | b2-shape, optionally overriding
  // input_size, stem_channels, se_ratio and stages
  // ("expansion:kernel:stride:out:repeats" entries separated by commas).
  static BackboneConfig from_config(const Config& cfg);
  void write(Config& cfg) const;

  void validate() const;
  std::size_t total_stride() const;
  std::size_t feature_side() const { return input_size / total_stride(); }
  std::size_t out_channels() const;
  std::size_t block_count() const;
};

std::string format_stages(const std::vector<StageConfig>& stages);
std::vector<StageConfig> parse_stages(const std::string& text);

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  static BatchNorm init(std::size_t channels, DType dtype);
  Tensor operator()(const Tensor& x, Mode mode) { return batch_norm(x, gamma, beta, state, mode); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct SqueezeExcite {
  Dense reduce;  // C -> floor(C * ratio)
  Dense expand;  // back to C

  static SqueezeExcite init(std::size_t channels, double ratio, Rng& rng, DType dtype);
};

struct MBConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t expansion = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;

  std::size_t expanded_channels() const { return in_channels * expansion; }
  bool has_residual() const { return stride == 1 && in_channels == out_channels; }
};

struct MBConvBlock {
  MBConvSpec spec;
  Tensor expand_weight;  // undefined when expansion == 1
  BatchNorm expand_bn;
  Tensor depthwise_weight;
  BatchNorm depthwise_bn;
  SqueezeExcite se;
  Tensor project_weight;
  BatchNorm project_bn;

  static MBConvBlock init(const MBConvSpec& spec, double se_ratio, Rng& rng, DType dtype);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BackboneParams {
  Tensor stem_weight;
  BatchNorm stem_bn;
  std::vector<MBConvBlock> blocks;

  static BackboneParams init(const BackboneConfig& cfg, Rng& rng, DType dtype);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Channel gate: global average pool -> FC -> silu -> FC -> sigmoid, applied
// multiplicatively to x (N x C x H x W).
Tensor se_block(const Tensor& x, const SqueezeExcite& se);

// expand 1x1 (skipped at expansion 1) -> bn -> silu -> depthwise kxk/stride
// -> bn -> silu -> SE -> project 1x1 -> bn, plus identity skip when the
// stride is 1 and the channel count is unchanged.
Tensor mbconv(const Tensor& x, MBConvBlock& block, Mode mode);

// Batched forward on N x 1 x S x S images, returning N x C x S/r x S/r.
Tensor backbone_features(const Tensor& images, const BackboneConfig& cfg, BackboneParams& params, Mode mode);

struct FeatureMap {
  Tensor values;  // C x H x W
  Condition condition = Condition::copy;
};

// Single-image forward on a 1 x S x S image with values in [0, 1].
FeatureMap backbone_forward(const Tensor& image, Condition condition, const BackboneConfig& cfg,
                            BackboneParams& params, Mode mode);

// One token per spatial position in row-major scan order: token y*W + x is
// the channel vector at (y, x). Returns (H*W) x C.
Tensor flatten_tokens(const FeatureMap& fm);
FeatureMap unflatten_tokens(const Tensor& tokens, std::size_t height, std::size_t width, Condition condition);

// Batched form: N x C x H x W -> N x (H*W) x C.
Tensor flatten_tokens_batch(const Tensor& features);

}  // namespace mstream

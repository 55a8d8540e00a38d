#include "mstream/backbone.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace mstream {

BackboneConfig BackboneConfig::desk() {
  BackboneConfig cfg;
  cfg.input_size = 64;
  cfg.stem_channels = 8;
  cfg.se_ratio = 0.25;
  cfg.stages = {
      {1, 3, 1, 8, 1},
      {4, 3, 2, 16, 1},
      {4, 5, 2, 24, 1},
      {4, 3, 2, 32, 1},
  };
  return cfg;
}

BackboneConfig BackboneConfig::b2_shape() {
  BackboneConfig cfg;
  cfg.input_size = 512;
  cfg.stem_channels = 32;
  cfg.se_ratio = 0.25;
  // EfficientNet-B0 stage table scaled to B2 width (x1.1) and depth (x1.2).
  cfg.stages = {
      {1, 3, 1, 16, 2}, {6, 3, 2, 24, 3}, {6, 5, 2, 48, 3}, {6, 3, 2, 88, 4},
      {6, 5, 1, 120, 4}, {6, 5, 2, 208, 5}, {6, 3, 1, 352, 2},
  };
  return cfg;
}

std::string format_stages(const std::vector<StageConfig>& stages) {
  std::ostringstream out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (i) out << ',';
    out << s.expansion << ':' << s.kernel << ':' << s.stride << ':' << s.out_channels << ':' << s.repeats;
  }
  return out.str();
}

std::vector<StageConfig> parse_stages(const std::string& text) {
  std::vector<StageConfig> stages;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t fields[5];
    std::size_t n = 0;
    std::istringstream parts(item);
    std::string part;
    while (std::getline(parts, part, ':')) {
      const auto first = part.find_first_not_of(' ');
      const auto last = part.find_last_not_of(' ');
      if (first == std::string::npos || n == 5) throw ConfigError("bad stage entry '" + item + "'");
      part = part.substr(first, last - first + 1);
      auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), fields[n]);
      if (ec != std::errc() || ptr != part.data() + part.size()) throw ConfigError("bad stage entry '" + item + "'");
      ++n;
    }
    if (n != 5) throw ConfigError("stage entry '" + item + "' needs expansion:kernel:stride:out:repeats");
    stages.push_back({fields[0], fields[1], fields[2], fields[3], fields[4]});
  }
  return stages;
}

BackboneConfig BackboneConfig::from_config(const Config& cfg) {
  const std::string preset = cfg.get("backbone", "preset", "desk");
  BackboneConfig out;
  if (preset == "desk") out = desk();
  else if (preset == "b2-shape") out = b2_shape();
  else if (preset != "custom") throw ConfigError("unknown backbone preset '" + preset + "'");
  out.input_size = static_cast<std::size_t>(cfg.get_int("backbone", "input_size", static_cast<int>(out.input_size)));
  out.stem_channels =
      static_cast<std::size_t>(cfg.get_int("backbone", "stem_channels", static_cast<int>(out.stem_channels)));
  out.se_ratio = cfg.get_double("backbone", "se_ratio", out.se_ratio);
  if (cfg.has("backbone", "stages")) out.stages = parse_stages(cfg.get("backbone", "stages", ""));
  out.validate();
  return out;
}

void BackboneConfig::write(Config& cfg) const {
  cfg.set("backbone", "preset", "custom");
  cfg.set("backbone", "input_size", std::to_string(input_size));
  cfg.set("backbone", "stem_channels", std::to_string(stem_channels));
  cfg.set("backbone", "se_ratio", format_double(se_ratio));
  cfg.set("backbone", "stages", format_stages(stages));
}

void BackboneConfig::validate() const {
  if (stages.empty()) throw ConfigError("backbone needs at least one stage");
  if (stem_channels == 0) throw ConfigError("backbone stem_channels must be positive");
  if (!(se_ratio > 0.0 && se_ratio <= 1.0)) throw ConfigError("backbone se_ratio must lie in (0, 1]");
  for (const auto& s : stages) {
    if (s.kernel != 3 && s.kernel != 5) throw ConfigError("MBConv kernel must be 3 or 5");
    if (s.stride != 1 && s.stride != 2) throw ConfigError("MBConv stride must be 1 or 2");
    if (s.expansion == 0 || s.out_channels == 0 || s.repeats == 0) {
      throw ConfigError("MBConv expansion, channels and repeats must be positive");
    }
  }
  const std::size_t r = total_stride();
  if (input_size < 16) throw ConfigError("backbone input_size must be at least 16");
  if (input_size % r != 0) {
    throw ConfigError("backbone input_size " + std::to_string(input_size) + " is not divisible by the total stride " +
                      std::to_string(r));
  }
}

std::size_t BackboneConfig::total_stride() const {
  std::size_t r = 2;  // stem
  for (const auto& s : stages) r *= s.stride;
  return r;
}

std::size_t BackboneConfig::out_channels() const { return stages.empty() ? stem_channels : stages.back().out_channels; }

std::size_t BackboneConfig::block_count() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.repeats;
  return n;
}

BatchNorm BatchNorm::init(std::size_t channels, DType dtype) {
  return {Tensor::full({channels}, 1.0, dtype, true), Tensor::zeros({channels}, dtype, true),
          BatchNormState::fresh(channels, dtype)};
}

void BatchNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma, ParamRole::trainable});
  out.push_back({prefix + ".beta", beta, ParamRole::trainable});
  out.push_back({prefix + ".running_mean", state.running_mean, ParamRole::buffer});
  out.push_back({prefix + ".running_var", state.running_var, ParamRole::buffer});
}

SqueezeExcite SqueezeExcite::init(std::size_t channels, double ratio, Rng& rng, DType dtype) {
  const auto squeezed = static_cast<std::size_t>(std::floor(static_cast<double>(channels) * ratio));
  if (squeezed < 1) {
    throw ConfigError("squeeze-excite: floor(" + std::to_string(channels) + " * " + format_double(ratio) + ") < 1");
  }
  SqueezeExcite se;
  se.reduce = Dense::init(channels, squeezed, rng, dtype);
  se.expand = Dense::init(squeezed, channels, rng, dtype);
  return se;
}

MBConvBlock MBConvBlock::init(const MBConvSpec& spec, double se_ratio, Rng& rng, DType dtype) {
  MBConvBlock b;
  b.spec = spec;
  const std::size_t mid = spec.expanded_channels();
  if (spec.expansion != 1) {
    b.expand_weight = he_normal({mid, spec.in_channels, 1, 1}, spec.in_channels, rng, dtype);
    b.expand_bn = BatchNorm::init(mid, dtype);
  }
  b.depthwise_weight = he_normal({mid, 1, spec.kernel, spec.kernel}, spec.kernel * spec.kernel, rng, dtype);
  b.depthwise_bn = BatchNorm::init(mid, dtype);
  b.se = SqueezeExcite::init(mid, se_ratio, rng, dtype);
  b.project_weight = he_normal({spec.out_channels, mid, 1, 1}, mid, rng, dtype);
  b.project_bn = BatchNorm::init(spec.out_channels, dtype);
  return b;
}

void MBConvBlock::collect(const std::string& prefix, ParamList& out) const {
  if (expand_weight.defined()) {
    out.push_back({prefix + ".expand.weight", expand_weight, ParamRole::trainable});
    expand_bn.collect(prefix + ".expand.bn", out);
  }
  out.push_back({prefix + ".depthwise.weight", depthwise_weight, ParamRole::trainable});
  depthwise_bn.collect(prefix + ".depthwise.bn", out);
  se.reduce.collect(prefix + ".se.reduce", out);
  se.expand.collect(prefix + ".se.expand", out);
  out.push_back({prefix + ".project.weight", project_weight, ParamRole::trainable});
  project_bn.collect(prefix + ".project.bn", out);
}

BackboneParams BackboneParams::init(const BackboneConfig& cfg, Rng& rng, DType dtype) {
  cfg.validate();
  BackboneParams p;
  p.stem_weight = he_normal({cfg.stem_channels, 1, 3, 3}, 9, rng, dtype);
  p.stem_bn = BatchNorm::init(cfg.stem_channels, dtype);
  std::size_t channels = cfg.stem_channels;
  for (const auto& stage : cfg.stages) {
    for (std::size_t r = 0; r < stage.repeats; ++r) {
      MBConvSpec spec{channels, stage.out_channels, stage.expansion, stage.kernel, r == 0 ? stage.stride : 1};
      p.blocks.push_back(MBConvBlock::init(spec, cfg.se_ratio, rng, dtype));
      channels = stage.out_channels;
    }
  }
  return p;
}

void BackboneParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".stem.weight", stem_weight, ParamRole::trainable});
  stem_bn.collect(prefix + ".stem.bn", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

Tensor se_block(const Tensor& x, const SqueezeExcite& se) {
  if (x.dim() != 4) throw DimensionError("se_block expects N x C x H x W, got " + shape_to_string(x.shape()));
  if (se.reduce.weight.size(0) != x.size(1)) throw DimensionError("se_block: channel count does not match weights");
  Tensor pooled = mean_axes(x, {2, 3});  // N x C
  Tensor gate = sigmoid(se.expand(silu(se.reduce(pooled))));
  return mul(x, reshape(gate, {x.size(0), x.size(1), 1, 1}));
}

Tensor mbconv(const Tensor& x, MBConvBlock& block, Mode mode) {
  const MBConvSpec& s = block.spec;
  if (x.dim() != 4 || x.size(1) != s.in_channels) {
    throw DimensionError("mbconv expects " + std::to_string(s.in_channels) + " input channels, got " +
                         shape_to_string(x.shape()));
  }
  Tensor h = x;
  if (block.expand_weight.defined()) h = silu(block.expand_bn(conv2d(h, block.expand_weight), mode));
  const std::size_t mid = s.expanded_channels();
  h = conv2d(h, block.depthwise_weight, {s.stride, (s.kernel - 1) / 2, mid});
  h = silu(block.depthwise_bn(h, mode));
  h = se_block(h, block.se);
  h = block.project_bn(conv2d(h, block.project_weight), mode);
  if (s.has_residual()) h = add(h, x);
  return h;
}

Tensor backbone_features(const Tensor& images, const BackboneConfig& cfg, BackboneParams& params, Mode mode) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != cfg.input_size || s[3] != cfg.input_size) {
    throw DimensionError("backbone expects N x 1 x " + std::to_string(cfg.input_size) + " x " +
                         std::to_string(cfg.input_size) + " images, got " + shape_to_string(s));
  }
  Tensor h = silu(params.stem_bn(conv2d(images, params.stem_weight, {2, 1, 1}), mode));
  for (auto& block : params.blocks) h = mbconv(h, block, mode);
  return h;
}

FeatureMap backbone_forward(const Tensor& image, Condition condition, const BackboneConfig& cfg,
                            BackboneParams& params, Mode mode) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 1) {
    throw DimensionError("backbone_forward expects a single-channel 1 x S x S image, got " + shape_to_string(s));
  }
  if (s[1] != cfg.input_size || s[2] != cfg.input_size) {
    throw DimensionError("backbone_forward expects side " + std::to_string(cfg.input_size) + ", got " +
                         shape_to_string(s));
  }
  for (double v : image.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("backbone_forward: image values must lie in [0, 1]");
  }
  Tensor out = backbone_features(reshape(image, {1, 1, s[1], s[2]}), cfg, params, mode);
  const auto& o = out.shape();
  return {reshape(out, {o[1], o[2], o[3]}), condition};
}

Tensor flatten_tokens(const FeatureMap& fm) {
  const auto& s = fm.values.shape();
  if (s.size() != 3) throw DimensionError("feature map must be C x H x W, got " + shape_to_string(s));
  return reshape(permute(fm.values, {1, 2, 0}), {s[1] * s[2], s[0]});
}

FeatureMap unflatten_tokens(const Tensor& tokens, std::size_t height, std::size_t width, Condition condition) {
  const auto& s = tokens.shape();
  if (s.size() != 2 || s[0] != height * width) {
    throw DimensionError("tokens " + shape_to_string(s) + " do not match a " + std::to_string(height) + " x " +
                         std::to_string(width) + " map");
  }
  return {permute(reshape(tokens, {height, width, s[1]}), {2, 0, 1}), condition};
}

Tensor flatten_tokens_batch(const Tensor& features) {
  const auto& s = features.shape();
  if (s.size() != 4) throw DimensionError("features must be N x C x H x W, got " + shape_to_string(s));
  return reshape(permute(features, {0, 2, 3, 1}), {s[0], s[2] * s[3], s[1]});
}

}  // namespace mstream

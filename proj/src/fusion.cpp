#include "mstream/fusion.hpp"

#include <cmath>
#include <cstdio>

#include "mstream/ops.hpp"

namespace mstream {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::fused:
      return "fused";
    case FusionMode::spatial_only:
      return "spatial-only";
    case FusionMode::scoring_only:
      return "scoring-only";
  }
  return "?";
}

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "fused") return FusionMode::fused;
  if (name == "spatial-only") return FusionMode::spatial_only;
  if (name == "scoring-only") return FusionMode::scoring_only;
  throw ConfigError("unknown fusion mode '" + name + "' (expected fused, spatial-only or scoring-only)");
}

ModelConfig ModelConfig::from_config(const Config& cfg) {
  ModelConfig m;
  m.backbone = BackboneConfig::from_config(cfg);
  m.attention = AttentionConfig::from_config(cfg);
  m.scorer = cfg.get("model", "scorer", m.scorer);
  m.mode = fusion_mode_from_string(cfg.get("model", "fusion", to_string(m.mode)));
  m.dtype = dtype_from_string(cfg.get("model", "precision", to_string(m.dtype)));
  m.validate();
  return m;
}

void ModelConfig::write(Config& cfg) const {
  backbone.write(cfg);
  attention.write(cfg);
  cfg.set("model", "scorer", scorer);
  cfg.set("model", "fusion", to_string(mode));
  cfg.set("model", "precision", to_string(dtype));
}

void ModelConfig::validate() const {
  backbone.validate();
  attention.validate(backbone.out_channels());
  if (scorer != "file" && scorer != "stub") throw ConfigError("unknown scorer '" + scorer + "'");
}

std::string ModelConfig::canonical() const {
  Config cfg;
  write(cfg);
  return cfg.serialize();
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ModelConfig::fingerprint() const { return fnv1a_hex(canonical()); }

MultiStreamModel MultiStreamModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  MultiStreamModel m;
  m.config = config;
  Rng rng(seed);
  m.spatial = SpatialStream::init(config.backbone, config.attention, rng, config.dtype);
  m.scoring = ScoringStream::init(rng, config.dtype);
  m.scorer = make_scorer(config.scorer, config.dtype);
  return m;
}

ParamList MultiStreamModel::parameters() const {
  ParamList out;
  spatial.collect("spatial", out);
  scoring.collect("scoring", out);
  scorer->collect("scorer", out);
  return out;
}

StreamOutputs MultiStreamModel::forward(const Tensor& images, const Tensor& features, Mode mode) {
  StreamOutputs out;
  if (config.mode != FusionMode::scoring_only) out.spatial = spatial.forward(images, mode);
  if (config.mode != FusionMode::spatial_only) out.scoring = scoring.forward(features);
  switch (config.mode) {
    case FusionMode::fused:
      if (out.spatial.size(0) != out.scoring.size(0)) throw DimensionError("stream batch sizes differ");
      out.final = mul_scalar(add(out.spatial, out.scoring), 0.5);
      break;
    case FusionMode::spatial_only:
      out.final = out.spatial;
      break;
    case FusionMode::scoring_only:
      out.final = out.scoring;
      break;
  }
  return out;
}

std::array<double, 2> fuse(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  for (const auto* p : {&a, &b}) {
    if (!std::isfinite((*p)[0]) || !std::isfinite((*p)[1]) || std::abs((*p)[0] + (*p)[1] - 1.0) > 1e-6) {
      throw ContractError("fuse: input is not a probability vector");
    }
  }
  return {(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0};
}

Label decide(double p_mci, double threshold) { return p_mci >= threshold ? Label::mci : Label::cn; }

Prediction predict(MultiStreamModel& model, const SubjectRecord& subject, const std::array<Tensor, 3>& images,
                   double threshold) {
  NoGradGuard guard;
  Prediction out;
  out.threshold = threshold;
  const FusionMode mode = model.config.mode;
  if (mode != FusionMode::scoring_only || model.scorer->kind() != "file") {
    for (Condition c : kConditions) {
      if (!images[static_cast<std::size_t>(c)].defined()) {
        throw DataError("subject " + subject.subject_id + ": missing " + to_string(c) + " image");
      }
    }
  }
  if (mode != FusionMode::scoring_only) out.p_spatial = model.spatial.forward_subject(images, Mode::eval);
  if (mode != FusionMode::spatial_only) {
    const ScoringInput input{score_images(*model.scorer, subject, images), subject.demographics};
    out.p_scoring = model.scoring.forward_one(input);
  }
  // A single-stream model reports its active stream in both slots so the
  // final vector is still the mean of the two.
  if (mode == FusionMode::spatial_only) out.p_scoring = out.p_spatial;
  if (mode == FusionMode::scoring_only) out.p_spatial = out.p_scoring;
  out.p_final = fuse(out.p_spatial, out.p_scoring);
  out.label = decide(out.p_final[1], threshold);
  return out;
}

}  // namespace mstream

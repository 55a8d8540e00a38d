#include "mstream/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mstream/image.hpp"
#include "mstream/ops.hpp"

namespace mstream {

ScoreTriple FileScorer::score(const SubjectRecord& subject, const std::array<Tensor, 3>&) const {
  if (!subject.ai_scores) throw DataError("subject " + subject.subject_id + ": manifest has no ai scores");
  return *subject.ai_scores;
}

StubScorer::StubScorer(double threshold, double sat, DType dtype)
    : ink_threshold(Tensor::scalar(threshold, dtype)), saturation(Tensor::scalar(sat, dtype)) {
  if (!(sat > 0)) throw ConfigError("stub scorer saturation must be positive");
}

double StubScorer::score_image(const Tensor& image) const {
  const double fraction = ink_fraction(image, ink_threshold.item());
  return kMaxFigureScore * std::min(1.0, fraction / saturation.item());
}

ScoreTriple StubScorer::score(const SubjectRecord& subject, const std::array<Tensor, 3>& images) const {
  ScoreTriple out;
  for (Condition c : kConditions) {
    const Tensor& img = images[static_cast<std::size_t>(c)];
    if (!img.defined()) throw DataError("subject " + subject.subject_id + ": missing " + to_string(c) + " image");
    out[c] = score_image(img);
  }
  return out;
}

void StubScorer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".ink_threshold", ink_threshold, ParamRole::frozen});
  out.push_back({prefix + ".saturation", saturation, ParamRole::frozen});
}

std::shared_ptr<Scorer> make_scorer(const std::string& kind, DType dtype) {
  if (kind == "file") return std::make_shared<FileScorer>();
  if (kind == "stub") return std::make_shared<StubScorer>(0.25, 0.15, dtype);
  throw ConfigError("unknown scorer '" + kind + "' (expected file or stub)");
}

ScoreTriple score_images(const Scorer& scorer, const SubjectRecord& subject, const std::array<Tensor, 3>& images) {
  ScoreTriple s = scorer.score(subject, images);
  for (Condition c : kConditions) {
    if (!std::isfinite(s[c])) throw NumericError("subject " + subject.subject_id + ": non-finite score");
    s[c] = std::clamp(s[c], 0.0, kMaxFigureScore);
  }
  return s;
}

std::string scorer_state(const Scorer& scorer) {
  ParamList list;
  scorer.collect("scorer", list);
  std::string bytes = scorer.kind();
  for (const auto& p : list) {
    bytes += '\n' + p.name + '\n';
    for (double v : p.tensor.values()) {
      char raw[sizeof v];
      std::memcpy(raw, &v, sizeof v);
      bytes.append(raw, sizeof v);
    }
  }
  return bytes;
}

bool assert_frozen(const std::string& before, const std::string& after) { return before == after; }

FeatureNormalizer FeatureNormalizer::init(DType dtype) {
  FeatureNormalizer n;
  n.mean = Tensor::zeros({kContinuous}, dtype);
  n.stddev = Tensor::full({kContinuous}, 1.0, dtype);
  n.fitted = Tensor::scalar(0.0, dtype);
  return n;
}

namespace {

std::array<double, FeatureNormalizer::kContinuous> continuous(const ScoringInput& in) {
  return {in.scores.copy, in.scores.immediate, in.scores.delayed, in.demographics.age, in.demographics.education};
}

}  // namespace

void FeatureNormalizer::fit(const std::vector<ScoringInput>& inputs, SplitRole role) {
  if (inputs.size() < 2) throw DataError("normalizer needs at least two training subjects");
  if (role != SplitRole::train) audit_violation = true;
  std::array<double, kContinuous> m{}, ss{};
  for (const auto& in : inputs) {
    const auto v = continuous(in);
    for (std::size_t j = 0; j < kContinuous; ++j) m[j] += v[j];
  }
  for (auto& x : m) x /= static_cast<double>(inputs.size());
  for (const auto& in : inputs) {
    const auto v = continuous(in);
    for (std::size_t j = 0; j < kContinuous; ++j) ss[j] += (v[j] - m[j]) * (v[j] - m[j]);
  }
  std::vector<double> sd(kContinuous);
  for (std::size_t j = 0; j < kContinuous; ++j) {
    sd[j] = std::sqrt(ss[j] / static_cast<double>(inputs.size() - 1));
    if (!(sd[j] > 1e-12)) sd[j] = 1.0;  // constant column: centre only
  }
  mean.assign(std::vector<double>(m.begin(), m.end()));
  stddev.assign(sd);
  fitted.set(0, 1.0);
}

bool FeatureNormalizer::is_fitted() const { return fitted.defined() && fitted.item() == 1.0; }

Tensor FeatureNormalizer::transform(const std::vector<ScoringInput>& inputs) const {
  if (!is_fitted()) throw StateError("scoring normalizer used before fitting on the training split");
  if (inputs.empty()) throw DataError("no subjects to transform");
  const auto m = mean.values(), sd = stddev.values();
  std::vector<double> out;
  out.reserve(inputs.size() * kFeatures);
  for (const auto& in : inputs) {
    const auto v = continuous(in);
    for (std::size_t j = 0; j < 3; ++j) out.push_back((v[j] - m[j]) / sd[j]);
    out.push_back((v[3] - m[3]) / sd[3]);
    out.push_back(in.demographics.sex == Sex::female ? 1.0 : 0.0);
    out.push_back((v[4] - m[4]) / sd[4]);
  }
  return Tensor::from({inputs.size(), kFeatures}, out, mean.dtype());
}

void FeatureNormalizer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".mean", mean, ParamRole::buffer});
  out.push_back({prefix + ".stddev", stddev, ParamRole::buffer});
  out.push_back({prefix + ".fitted", fitted, ParamRole::buffer});
}

ScoringStream ScoringStream::init(Rng& rng, DType dtype) {
  return {FeatureNormalizer::init(dtype), Dense::init(FeatureNormalizer::kFeatures, 2, rng, dtype)};
}

Tensor ScoringStream::forward(const Tensor& features) const {
  if (features.dim() != 2 || features.size(1) != FeatureNormalizer::kFeatures) {
    throw DimensionError("scoring stream expects N x 6 features, got " + shape_to_string(features.shape()));
  }
  return softmax(fc(features), 1);
}

std::array<double, 2> ScoringStream::forward_one(const ScoringInput& input) const {
  Tensor p = forward(normalizer.transform({input}));
  return {p.at(0), p.at(1)};
}

void ScoringStream::collect(const std::string& prefix, ParamList& out) const {
  normalizer.collect(prefix + ".normalizer", out);
  fc.collect(prefix + ".fc", out);
}

}  // namespace mstream

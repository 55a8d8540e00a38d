#pragma once

// Scoring stream: a frozen scorer turns the three drawings into figure
// scores, which are joined with demographics and classified by one dense
// layer and a softmax.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "mstream/config.hpp"
#include "mstream/manifest.hpp"
#include "mstream/params.hpp"

namespace mstream {

// Produces one ScoreTriple per subject. Implementations hold no mutable
// state after construction; their tensors are reported with the frozen role.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string kind() const = 0;
  // images: three preprocessed 1 x S x S tensors in condition order (may be
  // undefined for scorers that do not look at pixels).
  virtual ScoreTriple score(const SubjectRecord& subject, const std::array<Tensor, 3>& images) const = 0;
  virtual void collect(const std::string& prefix, ParamList& out) const = 0;
};

// Returns the AI scores recorded in the manifest verbatim.
class FileScorer final : public Scorer {
 public:
  std::string kind() const override { return "file"; }
  ScoreTriple score(const SubjectRecord& subject, const std::array<Tensor, 3>& images) const override;
  void collect(const std::string&, ParamList&) const override {}
};

// 36 * min(1, ink fraction / saturation), where ink fraction counts pixels
// above the ink threshold. Both calibration values are frozen tensors.
class StubScorer final : public Scorer {
 public:
  explicit StubScorer(double ink_threshold = 0.25, double saturation = 0.15, DType dtype = DType::f64);
  std::string kind() const override { return "stub"; }
  ScoreTriple score(const SubjectRecord& subject, const std::array<Tensor, 3>& images) const override;
  void collect(const std::string& prefix, ParamList& out) const override;

  double score_image(const Tensor& image) const;
  Tensor ink_threshold;
  Tensor saturation;
};

// kind: "file" or "stub".
std::shared_ptr<Scorer> make_scorer(const std::string& kind, DType dtype);

// Scores are clamped to [0, 36] on the way out of any scorer.
ScoreTriple score_images(const Scorer& scorer, const SubjectRecord& subject, const std::array<Tensor, 3>& images);

// Byte image of every tensor a scorer owns, for freeze checks.
std::string scorer_state(const Scorer& scorer);
// True iff the two states are bitwise identical.
bool assert_frozen(const std::string& before, const std::string& after);

// Raw per-subject inputs of the scoring stream.
struct ScoringInput {
  ScoreTriple scores;
  Demographics demographics;
};

enum class SplitRole { train, validation, test };

// Z-scores the three scores, age and education with statistics fitted on
// the training split; sex becomes 1 for female, 0 for male.
struct FeatureNormalizer {
  static constexpr std::size_t kContinuous = 5;  // copy, immediate, delayed, age, education
  static constexpr std::size_t kFeatures = 6;

  Tensor mean;    // kContinuous
  Tensor stddev;  // kContinuous
  Tensor fitted;  // scalar flag, 1 once fitted
  // Set when fit() is called with anything but the training split.
  bool audit_violation = false;

  static FeatureNormalizer init(DType dtype);
  void fit(const std::vector<ScoringInput>& inputs, SplitRole role);
  bool is_fitted() const;
  // N x 6 features (copy, immediate, delayed, age, sex, education); throws
  // StateError when unfitted. The result never requires grad.
  Tensor transform(const std::vector<ScoringInput>& inputs) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct ScoringStream {
  FeatureNormalizer normalizer;
  Dense fc;  // 6 -> 2

  static ScoringStream init(Rng& rng, DType dtype);
  // features: N x 6 from the normalizer. Returns N x 2 (CN, MCI).
  Tensor forward(const Tensor& features) const;
  std::array<double, 2> forward_one(const ScoringInput& input) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace mstream

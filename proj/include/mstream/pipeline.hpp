#pragma once

// Glue between the cohort files and the protocol: loading samples, one
// train/test repeat of the deep model, the logistic baselines, and the
// full baseline comparison.

#include <optional>
#include <string>
#include <vector>

#include "mstream/evaluation.hpp"
#include "mstream/logistic.hpp"
#include "mstream/training.hpp"

namespace mstream {

inline constexpr const char* kRowMmse = "MMSE scores";
inline constexpr const char* kRowExpert = "RCFT scores by experts";
inline constexpr const char* kRowAi = "RCFT scores by AI";
inline constexpr const char* kRowImages = "Only RCFT images";
inline constexpr const char* kRowMulti = "Image + score by AI";
inline constexpr const char* kRowScoring = "Only scoring stream";

// Display name of the deep model for a fusion mode.
std::string model_row_name(FusionMode mode);

struct Dataset {
  CohortManifest manifest;
  std::vector<Sample> samples;  // manifest order
  std::vector<int> labels;      // 1 = MCI
};

// Builds one Sample per record: images are read and preprocessed to the
// backbone input size when the model looks at pixels (spatial stream or the
// stub scorer); scoring inputs come from the model's scorer.
Dataset load_dataset(const CohortManifest& manifest, const ModelConfig& model);

// Independent seed for a named purpose (splitmix64 of seed and stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct RepeatArtifacts {
  RepeatOutcome outcome;  // test split
  TrainHistory history;
  std::string checkpoint;
};

// Fresh model seeded from seed, normalizer fitted on the training split,
// trained with early stopping on the validation split, scored on the test
// split.
RepeatArtifacts run_model_repeat(const Dataset& data, const ModelConfig& model, const TrainConfig& train,
                                 const Split& split, std::uint64_t seed);

// Test-set predictions of a trained model on every sample.
RepeatOutcome evaluate_model(MultiStreamModel& model, const Dataset& data);

enum class ScoreSource { mmse, expert, ai };
std::string to_string(ScoreSource source);

// Score columns of the source followed by the age, sex and education
// covariates. Throws DataError naming the first record lacking a field.
FeatureMatrix baseline_features(const CohortManifest& manifest, const std::vector<std::size_t>& idx, ScoreSource source);

struct LogisticRepeat {
  RepeatOutcome outcome;
  LogisticModel model;
};

// Fit on the training split, predict the test split. The validation split
// is unused (the solver has no tuning knobs to select).
LogisticRepeat run_logistic_repeat(const CohortManifest& manifest, ScoreSource source, const Split& split,
                                   const LogisticOptions& options);

struct ProtocolResult {
  EvalReport report;
  std::vector<TrainHistory> histories;       // deep models only
  std::vector<std::string> checkpoints;      // deep models only, one per repeat
  std::vector<std::string> coefficient_csvs; // logistic models only
  std::string median_checkpoint() const;
};

ProtocolResult evaluate_deep(const Dataset& data, const ModelConfig& model, const TrainConfig& train,
                             const EvalOptions& options, const std::string& name);

ProtocolResult evaluate_logistic(const CohortManifest& manifest, ScoreSource source, const LogisticOptions& logistic,
                                 const EvalOptions& options, const std::string& name);

struct SuiteResult {
  std::vector<ProtocolResult> rows;  // table order
  std::vector<SkippedRow> skipped;
};

// MMSE, expert-score and AI-score logistic models, then the spatial-only,
// scoring-only and fused deep models, in that order. A baseline
// whose inputs are missing is reported as skipped and the suite continues.
SuiteResult run_baseline_suite(const CohortManifest& manifest, const ModelConfig& model, const TrainConfig& train,
                               const LogisticOptions& logistic, const EvalOptions& options);

}  // namespace mstream

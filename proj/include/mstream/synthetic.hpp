#pragma once

// Synthetic cohort generator. Each subject has a memory latent, which
// removes figure elements (and so lowers the scores), and a motor latent,
// which changes stroke width, pen pressure and tremor. MCI shifts both.

#include <array>
#include <filesystem>
#include <vector>

#include "mstream/config.hpp"
#include "mstream/image.hpp"
#include "mstream/manifest.hpp"

namespace mstream {

inline constexpr std::size_t kFigureElements = 18;

struct SyntheticParams {
  std::size_t n = 200;
  std::uint64_t seed = 0;
  std::size_t image_size = 128;
  double memory_effect = 1.5;  // MCI mean shift of the memory latent, SD units
  double motor_effect = 1.5;   // MCI mean shift of the motor latent
  double age_effect = 3.0;     // years older on average for MCI
  double ai_noise_sd = 2.0;
  double ai_noise_limit = 8.0;  // AI noise is truncated to +-limit points
  std::size_t gross_errors = 0;
  double mmse_noise_sd = 2.0;
  bool render_images = true;

  static SyntheticParams from_config(const Config& cfg);
  void write(Config& cfg) const;
  // Throws ConfigError (n below 20, negative spreads, too many gross errors).
  void validate() const;
  std::string describe() const;
};

struct GrossError {
  std::string subject_id;
  Condition condition;
  double true_score;      // 2 x intact elements
  double recorded_score;  // what the manifest carries as the expert score
  double ai_score;
};

struct SyntheticSubject {
  SubjectRecord record;
  double memory = 0;
  double motor = 0;
  std::array<std::array<bool, kFigureElements>, 3> intact{};
  std::array<RasterImage, 3> images;  // empty unless rendered
};

struct SyntheticCohort {
  SyntheticParams params;
  std::vector<SyntheticSubject> subjects;
  std::vector<GrossError> gross_errors;
};

SyntheticCohort generate_synthetic_cohort(const SyntheticParams& params);

// Writes images/, manifest.csv, qc_scores.csv (image_id, condition,
// expert_score, ai_score) and qc_truth.csv, a corrections file restoring
// every planted gross error. Returns the manifest as written.
CohortManifest write_synthetic_cohort(const SyntheticCohort& cohort, const std::filesystem::path& out_dir);

std::string image_id(const std::string& subject_id, Condition condition);

}  // namespace mstream

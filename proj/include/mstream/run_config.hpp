#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mstream/pipeline.hpp"
#include "mstream/qc.hpp"
#include "mstream/synthetic.hpp"

namespace mstream {

struct QcOptions {
  double threshold = 10.0;
  RSquaredKind r_squared = RSquaredKind::pearson;

  static QcOptions from_config(const Config& cfg);
  void write(Config& cfg) const;
};

// Every module's settings plus the global seed and the output directory.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;
  LogisticOptions logistic;
  SyntheticParams synthetic;
  QcOptions qc;

  // Unknown sections or keys are rejected with ConfigError.
  static RunConfig from_config(const Config& cfg);
  Config to_config() const;
  // Canonical text written next to every run's outputs.
  std::string resolved() const;
};

// Applies "section.key=value" overrides on top of cfg.
void apply_overrides(Config& cfg, const std::vector<std::string>& overrides);

// Resolves a relative output directory against root (empty root: unchanged).
std::filesystem::path resolve_output(const std::filesystem::path& out, const std::filesystem::path& root);

}  // namespace mstream

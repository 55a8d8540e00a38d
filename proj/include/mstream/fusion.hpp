#pragma once

// The full two-stream model: spatial stream and scoring stream, merged by
// averaging their softmax outputs. Also the checkpoint format.

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "mstream/attention.hpp"
#include "mstream/scoring.hpp"

namespace mstream {

// fused: average of both streams. spatial_only / scoring_only: one stream
// alone, used by the ablation baseline and by sanity runs.
enum class FusionMode { fused, spatial_only, scoring_only };

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& name);

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::desk();
  AttentionConfig attention;
  std::string scorer = "file";
  FusionMode mode = FusionMode::fused;
  DType dtype = DType::f64;

  // Reads [backbone], [attention] and [model] (scorer, fusion, precision).
  static ModelConfig from_config(const Config& cfg);
  void write(Config& cfg) const;
  void validate() const;
  // Deterministic text form of every architecture-relevant field.
  std::string canonical() const;
  // 64-bit FNV-1a of canonical(), as 16 hex digits.
  std::string fingerprint() const;
};

std::string fnv1a_hex(const std::string& text);

// Per-batch outputs, each N x 2.
struct StreamOutputs {
  Tensor spatial;
  Tensor scoring;
  Tensor final;
};

struct MultiStreamModel {
  ModelConfig config;
  SpatialStream spatial;
  ScoringStream scoring;
  std::shared_ptr<const Scorer> scorer;

  static MultiStreamModel init(const ModelConfig& config, std::uint64_t seed);
  // Every tensor with its role; names are stable and unique.
  ParamList parameters() const;

  // images: (3N) x 1 x S x S subject-major, features: N x 6 normalized. In a
  // single-stream mode the unused stream's output is left undefined and
  // final equals the active stream.
  StreamOutputs forward(const Tensor& images, const Tensor& features, Mode mode);
};

// Elementwise mean of two probability 2-vectors. Throws ContractError when
// either input's sum is more than 1e-6 away from 1.
std::array<double, 2> fuse(const std::array<double, 2>& p_spatial, const std::array<double, 2>& p_scoring);

struct Prediction {
  std::array<double, 2> p_spatial{};
  std::array<double, 2> p_scoring{};
  std::array<double, 2> p_final{};
  Label label = Label::cn;
  double threshold = 0.5;
};

// MCI iff p >= threshold.
Label decide(double p_mci, double threshold);

// Runs both streams on one subject. images are preprocessed 1 x S x S
// tensors; a missing one is a DataError naming the subject and condition.
Prediction predict(MultiStreamModel& model, const SubjectRecord& subject, const std::array<Tensor, 3>& images,
                   double threshold = 0.5);

// Versioned text header followed by little-endian tensor records:
//   MSTREAM-CKPT 1\n
//   fingerprint <16 hex>\n
//   config-bytes <n>\n<canonical config text>
//   tensors <count>\n
// then per tensor: u32 name length, name, u8 role, u8 dtype, u32 rank,
// u64 dims..., raw element data.
std::string save_checkpoint(const MultiStreamModel& model);
// Throws CheckpointError on corruption, an inconsistent fingerprint, or a
// fingerprint that differs from expected (when given).
MultiStreamModel load_checkpoint(const std::string& bytes, const std::string& expected_fingerprint = {});
void save_checkpoint_file(const MultiStreamModel& model, const std::filesystem::path& path);
MultiStreamModel load_checkpoint_file(const std::filesystem::path& path, const std::string& expected_fingerprint = {});

}  // namespace mstream

#pragma once

// Expert-vs-AI score agreement, gross-discrepancy flagging and replayable
// corrections with an audit trail.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mstream/errors.hpp"
#include "mstream/manifest.hpp"

namespace mstream {

struct ScorePair {
  std::string image_id;
  Condition condition = Condition::copy;
  double expert = 0;
  double ai = 0;
  bool operator==(const ScorePair&) const = default;
};

// pearson: squared Pearson correlation (symmetric, in [0, 1]).
// determination: 1 - SS_res / SS_tot with the expert score as reference
// (can be negative under miscalibration).
enum class RSquaredKind { pearson, determination };

std::string to_string(RSquaredKind kind);
RSquaredKind r_squared_kind_from_string(const std::string& name);

struct Agreement {
  double r_squared = 0;
  double mae = 0;
};

// r^2 needs variance in the inputs; without it this error is thrown and
// still carries the MAE.
class RSquaredUndefined : public StatisticsError {
 public:
  RSquaredUndefined(const std::string& what, double mae) : StatisticsError(what), mae_(mae) {}
  double mae() const noexcept { return mae_; }

 private:
  double mae_;
};

// Equal lengths >= 2 required (ContractError otherwise).
Agreement compare_scores(std::span<const double> expert, std::span<const double> ai,
                         RSquaredKind kind = RSquaredKind::pearson);
Agreement compare_scores(const std::vector<ScorePair>& pairs, RSquaredKind kind = RSquaredKind::pearson);

struct Flag {
  std::string image_id;
  Condition condition = Condition::copy;
  double expert = 0;
  double ai = 0;
  double abs_diff = 0;
};

// Pairs whose |expert - ai| is strictly greater than threshold, in input order.
std::vector<Flag> flag_discrepancies(const std::vector<ScorePair>& pairs, double threshold = 10.0);

struct Correction {
  std::string image_id;
  double corrected_score = 0;
  std::string note;
};

struct AuditEntry {
  std::string image_id;
  double old_score = 0;
  double new_score = 0;
  std::string note;
  bool out_of_band = false;  // the image was not flagged before correction
};

struct QcReport {
  RSquaredKind kind = RSquaredKind::pearson;
  double threshold = 10.0;
  std::size_t pairs = 0;
  Agreement before;
  Agreement after;
  std::vector<Flag> flagged;        // before correction
  std::vector<Flag> flagged_after;  // after correction
  std::size_t corrections_applied = 0;
  std::vector<AuditEntry> audit;
  bool has_corrections = false;

  std::string to_text() const;
  // stage,pairs,r_squared,mae,flagged
  std::string summary_csv() const;
  // image_id,condition,expert_score,ai_score,abs_diff
  std::string flags_csv() const;
  // image_id,old_score,new_score,out_of_band,note
  std::string audit_csv() const;
};

struct QcResult {
  std::vector<ScorePair> corrected;
  QcReport report;
};

// Returns a corrected copy of pairs and the before/after report. Unknown ids
// raise DataError listing all of them; scores outside [0, 36] raise
// DataError. A correction of an image that was not flagged is applied and
// marked out of band in the audit log.
QcResult apply_corrections(const std::vector<ScorePair>& pairs, const std::vector<Correction>& corrections,
                           double threshold = 10.0, RSquaredKind kind = RSquaredKind::pearson);

// Report without corrections.
QcReport assess_scores(const std::vector<ScorePair>& pairs, double threshold = 10.0,
                       RSquaredKind kind = RSquaredKind::pearson);

// image_id,condition,expert_score,ai_score
std::vector<ScorePair> parse_score_pairs(const std::string& text);
std::vector<ScorePair> load_score_pairs(const std::filesystem::path& path);
std::string format_score_pairs(const std::vector<ScorePair>& pairs);
// image_id,corrected_score,note
std::vector<Correction> parse_corrections(const std::string& text);
std::vector<Correction> load_corrections(const std::filesystem::path& path);

// Pairs for every subject carrying both expert and AI scores.
std::vector<ScorePair> score_pairs_from_manifest(const CohortManifest& manifest);

}  // namespace mstream

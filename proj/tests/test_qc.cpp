#include <cmath>
#include <random>

#include "doctest.h"
#include "mstream/qc.hpp"
#include "mstream/synthetic.hpp"
#include "test_util.hpp"

using namespace mstream;

namespace {

std::vector<ScorePair> pairs_from(const std::vector<double>& expert, const std::vector<double>& ai) {
  std::vector<ScorePair> out;
  for (std::size_t i = 0; i < expert.size(); ++i) out.push_back({"I" + std::to_string(i), Condition::copy, expert[i], ai[i]});
  return out;
}

}  // namespace

TEST_CASE("compare scores") {
  auto same = compare_scores(std::vector<double>{1, 5, 9}, std::vector<double>{1, 5, 9});
  CHECK(same.r_squared == 1.0);
  CHECK(same.mae == 0.0);
  auto doubled = compare_scores(std::vector<double>{2, 4, 8}, std::vector<double>{4, 8, 16});
  CHECK(doubled.r_squared == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(doubled.mae > 0);
  CHECK(compare_scores(std::vector<double>{0, 36}, std::vector<double>{12, 24}).mae == 12.0);
  // The coefficient of determination penalizes the miscalibration.
  auto det = compare_scores(std::vector<double>{2, 4, 8}, std::vector<double>{4, 8, 16}, RSquaredKind::determination);
  CHECK(det.r_squared < 0.5);

  try {
    compare_scores(std::vector<double>{5, 5, 5}, std::vector<double>{4, 6, 8});
    FAIL("expected RSquaredUndefined");
  } catch (const RSquaredUndefined& e) {
    CHECK(e.mae() == doctest::Approx(5.0 / 3));
  }
  CHECK_THROWS_AS(compare_scores(std::vector<double>{1}, std::vector<double>{1}), ContractError);
  CHECK_THROWS_AS(compare_scores(std::vector<double>{1, 2}, std::vector<double>{1}), ContractError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 36);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(3 + rng() % 30), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
    }
    auto ab = compare_scores(a, b), ba = compare_scores(b, a);
    CHECK(ab.mae == doctest::Approx(ba.mae).epsilon(1e-14));
    CHECK(ab.r_squared == doctest::Approx(ba.r_squared).epsilon(1e-12));
    CHECK(ab.r_squared >= 0);
    CHECK(ab.r_squared <= 1);
  }
}

TEST_CASE("flag discrepancies") {
  CHECK(flag_discrepancies({}).empty());
  auto f = flag_discrepancies(pairs_from({20, 20, 0}, {10, 9, 11}));
  REQUIRE(f.size() == 2);
  CHECK(f[0].image_id == "I1");
  CHECK(f[0].abs_diff == 11);
  CHECK(f[1].image_id == "I2");

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> e, a;
    for (int i = 0; i < 50; ++i) {
      e.push_back(static_cast<double>(rng() % 37));
      a.push_back(static_cast<double>(rng() % 37));
    }
    const auto flags = flag_discrepancies(pairs_from(e, a));
    std::size_t expected = 0;
    for (int i = 0; i < 50; ++i) expected += std::abs(e[i] - a[i]) > 10 ? 1 : 0;
    CHECK(flags.size() == expected);
    for (const auto& fl : flags) CHECK(fl.abs_diff > 10);
  }
}

TEST_CASE("apply corrections") {
  const auto pairs = pairs_from({30, 10, 20, 25}, {18, 12, 21, 24});
  const auto copy = pairs;

  auto none = apply_corrections(pairs, {});
  CHECK(none.report.after.r_squared == none.report.before.r_squared);
  CHECK(none.report.after.mae == none.report.before.mae);

  auto fixed = apply_corrections(pairs, {{"I0", 19, "re-rated"}, {"I1", 11, "second look"}});
  CHECK(fixed.corrected[0].expert == 19);
  CHECK(fixed.report.corrections_applied == 2);
  REQUIRE(fixed.report.audit.size() == 2);
  CHECK(!fixed.report.audit[0].out_of_band);
  CHECK(fixed.report.audit[1].out_of_band);
  CHECK(fixed.report.audit[0].old_score == 30);
  CHECK(fixed.report.after.mae < fixed.report.before.mae);
  CHECK(fixed.report.flagged.size() == 1);
  CHECK(fixed.report.flagged_after.empty());
  // inputs untouched
  for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(pairs[i].expert == copy[i].expert);

  CHECK(fixed.report.audit_csv() ==
        "image_id,old_score,new_score,out_of_band,note\nI0,30,19,false,re-rated\nI1,10,11,true,second look\n");
  CHECK(fixed.report.summary_csv().rfind("stage,pairs,r_squared,mae,flagged\nbefore,4,", 0) == 0);
  CHECK(fixed.report.to_text().find("out of band: 1") != std::string::npos);

  try {
    apply_corrections(pairs, {{"X1", 3, ""}, {"I0", 3, ""}, {"X2", 3, ""}});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("X1, X2") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_corrections(pairs, {{"I0", 40, ""}}), DataError);
}

TEST_CASE("planted gross errors are all flagged and corrections improve agreement") {
  SyntheticParams p;
  p.n = 200;
  p.seed = 11;
  p.gross_errors = 30;
  p.render_images = false;
  TempDir dir;
  auto manifest = write_synthetic_cohort(generate_synthetic_cohort(p), dir.path);
  const auto pairs = load_score_pairs(dir.path / "qc_scores.csv");
  CHECK(pairs.size() == 600);
  CHECK(pairs == score_pairs_from_manifest(manifest));
  CHECK(parse_score_pairs(format_score_pairs(pairs)) == pairs);
  const auto truth = load_corrections(dir.path / "qc_truth.csv");
  REQUIRE(truth.size() == 30);
  auto report = assess_scores(pairs);
  CHECK(report.flagged.size() == 30);
  std::vector<Correction> first26(truth.begin(), truth.begin() + 26);
  auto result = apply_corrections(pairs, first26);
  CHECK(result.report.after.r_squared > result.report.before.r_squared);
  CHECK(result.report.after.mae < result.report.before.mae);
  CHECK(result.report.flagged_after.size() == 4);
  for (const auto& a : result.report.audit) CHECK(!a.out_of_band);
}

TEST_CASE("qc csv parsing") {
  auto pairs = parse_score_pairs("image_id,condition,expert_score,ai_score\nS1_copy,copy,30,28\nS1_imm,immediate,20,21\n");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[1].condition == Condition::immediate);
  CHECK_THROWS_AS(parse_score_pairs("image_id,condition,expert_score\nS1,copy,3\n"), FormatError);
  CHECK_THROWS_AS(parse_score_pairs("image_id,condition,expert_score,ai_score\nS1,copy,x,3\n"), FormatError);
  CHECK_THROWS_AS(parse_score_pairs("image_id,condition,expert_score,ai_score\nS1,copy,37,3\n"), FormatError);
  CHECK_THROWS_AS(parse_score_pairs("image_id,condition,expert_score,ai_score\nS1,copy,3,3\nS1,copy,3,3\n"), FormatError);
  auto corr = parse_corrections("image_id,corrected_score,note\nS1_copy,30,ok\n");
  CHECK(corr[0].note == "ok");
  CHECK(r_squared_kind_from_string("determination") == RSquaredKind::determination);
  CHECK_THROWS_AS(r_squared_kind_from_string("adjusted"), ConfigError);
}

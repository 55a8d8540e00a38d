#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "mstream/evaluation.hpp"
#include "mstream/stats.hpp"
#include "oracles.hpp"

using namespace mstream;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Random two-class instance; coarse scores force frequent ties.
Instance random_instance(std::mt19937_64& rng, bool ties) {
  const std::size_t n = 2 + rng() % 60;
  Instance in;
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    in.labels.push_back(static_cast<int>(rng() % 2));
    const double s = u(rng) + 0.3 * in.labels.back();
    in.scores.push_back(ties ? std::round(s * 5) / 5 : s);
  }
  in.labels[0] = 0;
  in.labels[1] = 1;
  return in;
}

RepeatOutcome outcome(std::vector<double> scores, std::vector<int> labels) {
  RepeatOutcome o;
  o.scores = std::move(scores);
  o.labels = std::move(labels);
  for (std::size_t i = 0; i < o.scores.size(); ++i) o.ids.push_back("S" + std::to_string(i));
  return o;
}

}  // namespace

TEST_CASE("auc") {
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  CHECK(auc(std::vector<double>{0.9, 0.4, 0.3, 0.5}, std::vector<int>{1, 1, 0, 0}) == 0.75);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ContractError);

  SUBCASE("rank formula equals pairwise counting exactly") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      auto in = random_instance(rng, trial % 2 == 0);
      CHECK(auc(in.scores, in.labels) == oracle::pairwise_auc(in.scores, in.labels));
    }
  }
  SUBCASE("flipping labels mirrors the value without ties") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      auto in = random_instance(rng, false);
      std::vector<int> flipped;
      for (int l : in.labels) flipped.push_back(1 - l);
      CHECK(auc(in.scores, in.labels) == doctest::Approx(1.0 - auc(in.scores, flipped)).epsilon(1e-15));
    }
  }
  SUBCASE("invariant under strictly increasing transforms") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      auto in = random_instance(rng, trial % 2 == 0);
      std::vector<double> t;
      for (double s : in.scores) t.push_back(std::exp(3 * s) - 7);
      CHECK(auc(t, in.labels) == auc(in.scores, in.labels));
    }
  }
}

TEST_CASE("classification metrics") {
  auto m = compute_metrics(std::vector<double>{0.9, 0.6, 0.4, 0.2}, std::vector<int>{1, 1, 0, 0}, 0.5);
  CHECK(m.acc == 1.0);
  CHECK(m.sen == 1.0);
  CHECK(m.spe == 1.0);
  auto h = compute_metrics(std::vector<double>{0.7, 0.4, 0.6, 0.2}, std::vector<int>{1, 1, 0, 0}, 0.5);
  CHECK(h.tp == 1);
  CHECK(h.fn == 1);
  CHECK(h.fp == 1);
  CHECK(h.tn == 1);
  CHECK(h.acc == 0.5);
  CHECK(h.sen == 0.5);
  CHECK(h.spe == 0.5);
  // score == threshold counts as positive
  auto b = compute_metrics(std::vector<double>{0.5, 0.49}, std::vector<int>{1, 0}, 0.5);
  CHECK(b.sen == 1.0);
  CHECK(b.spe == 1.0);
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{0.5}, std::vector<int>{0}, 0.5), MetricError);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto in = random_instance(rng, true);
    auto all_pos = compute_metrics(in.scores, in.labels, 0.0);
    CHECK(all_pos.sen == 1.0);
    CHECK(all_pos.spe == 0.0);
    auto none = compute_metrics(in.scores, in.labels, 1.5);
    CHECK(none.spe == 1.0);
    CHECK(none.sen == 0.0);
  }
}

TEST_CASE("roc curve") {
  auto perfect = roc_points(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1});
  CHECK(perfect.fpr.front() == 0);
  CHECK(perfect.tpr.front() == 0);
  CHECK(perfect.fpr.back() == 1);
  CHECK(perfect.tpr.back() == 1);
  bool corner = false;
  for (std::size_t i = 0; i < perfect.fpr.size(); ++i) corner |= perfect.fpr[i] == 0 && perfect.tpr[i] == 1;
  CHECK(corner);
  CHECK(perfect.to_csv().rfind("threshold,fpr,tpr\ninf,0,0\n", 0) == 0);

  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    auto in = random_instance(rng, trial % 3 == 0);
    auto roc = roc_points(in.scores, in.labels);
    CHECK(std::abs(roc.area() - oracle::pairwise_auc(in.scores, in.labels)) <= 1e-12);
    CHECK(roc.fpr.back() == 1.0);
    CHECK(roc.tpr.back() == 1.0);
    for (std::size_t i = 1; i < roc.fpr.size(); ++i) {
      CHECK(roc.fpr[i] >= roc.fpr[i - 1]);
      CHECK(roc.tpr[i] >= roc.tpr[i - 1]);
      CHECK(roc.thresholds[i] < roc.thresholds[i - 1]);
    }
  }
}

TEST_CASE("percentile intervals") {
  CHECK(percentile({1, 2, 3, 4, 5}, 0.5) == 3);
  CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(percentile({10, 0}, 0.25) == 2.5);
  auto constant = percentile_interval(std::vector<double>(50, 0.8123));
  CHECK(constant.lower == constant.upper);
  CHECK(constant.mean == 0.8123);

  // 50 values 0.02, 0.04, ..., 1.00: position 49 q.
  std::vector<double> v;
  for (int i = 1; i <= 50; ++i) v.push_back(i / 50.0);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(1));
  auto iv = percentile_interval(v);
  CHECK(iv.mean == doctest::Approx(0.51).epsilon(1e-12));
  CHECK(iv.lower == doctest::Approx(0.04 + 0.225 * 0.02).epsilon(1e-12));
  CHECK(iv.upper == doctest::Approx(0.96 + 0.775 * 0.02).epsilon(1e-12));
  CHECK(format_interval({0.852, 0.837, 0.869}) == "0.852 [0.837-0.869]");

  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.8, 0.05);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> s(2 + rng() % 60);
    for (auto& x : s) x = nd(rng);
    auto ci = percentile_interval(s);
    CHECK(ci.lower >= *std::min_element(s.begin(), s.end()));
    CHECK(ci.upper <= *std::max_element(s.begin(), s.end()));
    CHECK(ci.lower <= ci.upper);
  }
}

TEST_CASE("stratified split") {
  std::vector<int> ten{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  auto s = split_dataset(ten, 3);
  CHECK(s.train.size() == 6);
  CHECK(s.validation.size() == 2);
  CHECK(s.test.size() == 2);
  auto again = split_dataset(ten, 3);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);

  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 10 + rng() % 300;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % 2 ? 1 : static_cast<int>(rng() % 2);
    const auto seed = rng();
    for (bool stratify : {true, false}) {
      Split sp;
      try {
        sp = split_dataset(labels, seed, {}, stratify);
      } catch (const StratificationError&) {
        CHECK((!stratify || n < 40));  // stratified splits only fail for tiny cohorts
        continue;
      }
      std::vector<std::size_t> all;
      for (const auto* part : {&sp.train, &sp.validation, &sp.test}) all.insert(all.end(), part->begin(), part->end());
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> expect(n);
      std::iota(expect.begin(), expect.end(), 0);
      CHECK(all == expect);
      CHECK(sp.validation.size() == static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
      CHECK(sp.test.size() == static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
      if (stratify) {
        const double share = std::accumulate(labels.begin(), labels.end(), 0.0) / static_cast<double>(n);
        double pos = 0;
        for (auto i : sp.test) pos += labels[i];
        CHECK(std::abs(pos - share * static_cast<double>(sp.test.size())) < 1.0 + 1e-9);
      }
    }
  }
  CHECK_THROWS_AS(split_dataset({0, 1, 0, 1}, 1), DataError);
  CHECK_THROWS_AS(split_dataset({0, 0, 0, 0, 0, 0, 0, 0, 0, 1}, 1), StratificationError);
  CHECK_THROWS_AS(split_dataset(ten, 1, {0.5, 0.2, 0.2}), ConfigError);
  CHECK(split_dataset(ten, 1).test != split_dataset(ten, 2).test);
}

TEST_CASE("median repeat") {
  CHECK(median_auc_repeat({0.7, 0.9, 0.8}) == 2);
  CHECK(median_auc_repeat({0.7, 0.9, 0.8, 0.6}) == 0);  // lower median
  CHECK(median_auc_repeat({0.5, 0.5, 0.5}) == 1);
}

TEST_CASE("repeated evaluation") {
  EvalOptions opt;
  opt.repeats = 4;
  opt.seed_base = 100;

  SUBCASE("identical repeats give zero-width intervals") {
    auto rep = repeated_eval("stub", opt, [](int, std::uint64_t) {
      return outcome({0.9, 0.2, 0.6, 0.4}, {1, 0, 1, 0});
    });
    CHECK(rep.repeats.size() == 4);
    CHECK(rep.auc.lower == rep.auc.upper);
    CHECK(rep.acc.mean == 1.0);
    CHECK(rep.repeats[3].seed == 103);
  }
  SUBCASE("aggregates follow percentile arithmetic") {
    opt.repeats = 50;
    // Repeat r ranks r + 1 of 50 negatives below the single positive, so its
    // AUC is (r + 1) / 50.
    auto rep = repeated_eval("stub", opt, [](int r, std::uint64_t) {
      std::vector<double> s{0.5};
      std::vector<int> l{1};
      for (int i = 0; i < 50; ++i) {
        s.push_back(i <= r ? 0.1 : 0.9);
        l.push_back(0);
      }
      return outcome(s, l);
    });
    CHECK(rep.auc.mean == doctest::Approx(0.51).epsilon(1e-12));
    CHECK(rep.auc.lower == doctest::Approx(0.0445).epsilon(1e-12));
    CHECK(rep.auc.upper == doctest::Approx(0.9755).epsilon(1e-12));
    CHECK(rep.median_repeat == 24);
    CHECK(rep.median_roc().area() == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("threads do not change the report") {
    opt.repeats = 8;
    auto fn = [](int r, std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      std::vector<double> s;
      std::vector<int> l;
      for (int i = 0; i < 40; ++i) {
        l.push_back(i % 2);
        s.push_back(std::uniform_real_distribution<double>(0, 1)(rng) + 0.1 * r * l.back());
      }
      return outcome(s, l);
    };
    auto serial = repeated_eval("m", opt, fn);
    opt.jobs = 3;
    auto parallel = repeated_eval("m", opt, fn);
    CHECK(serial.repeats_csv() == parallel.repeats_csv());
    CHECK(serial.summary_csv() == parallel.summary_csv());
  }
  SUBCASE("a failing repeat is reported by index") {
    opt.jobs = 2;
    try {
      repeated_eval("m", opt, [](int r, std::uint64_t) {
        if (r == 2) throw NumericError("diverged");
        return outcome({0.9, 0.1}, {1, 0});
      });
      FAIL("expected RepeatError");
    } catch (const RepeatError& e) {
      CHECK(e.repeat() == 2);
      CHECK(std::string(e.what()).find("diverged") != std::string::npos);
    }
  }
  SUBCASE("report formats") {
    auto rep = repeated_eval("RCFT scores by AI", opt, [](int, std::uint64_t) {
      return outcome({0.9, 0.2, 0.6, 0.4}, {1, 0, 0, 1});
    });
    CHECK(rep.repeats_csv().rfind("model,repeat,seed,auc,acc,sen,spe\nRCFT scores by AI,0,100,0.75,0.5,0.5,0.5\n", 0) == 0);
    CHECK(rep.summary_csv().find("RCFT scores by AI,auc,0.75,0.75,0.75,4\n") != std::string::npos);
    auto table = format_table({rep}, {{"MMSE scores", "no MMSE column"}});
    CHECK(table.find("Input modality") == 0);
    CHECK(table.find("RCFT scores by AI") != std::string::npos);
    CHECK(table.find("0.750 [0.750-0.750]") != std::string::npos);
    CHECK(table.find("skipped: no MMSE column") != std::string::npos);
  }
  opt.repeats = 1;
  CHECK_THROWS_AS(repeated_eval("m", opt, [](int, std::uint64_t) { return RepeatOutcome{}; }), ConfigError);
}

TEST_CASE("descriptive statistics") {
  auto ms = mean_sd({1, 2, 3});
  CHECK(ms.mean == 2.0);
  CHECK(ms.sd == 1.0);
  CHECK_THROWS_AS(mean_sd({1}), StatisticsError);

  auto same = welch_t_test({1, 2, 3, 4}, {1, 2, 3, 4});
  CHECK(same.statistic == 0);
  CHECK(same.p == doctest::Approx(1.0));

  SUBCASE("welch matches a hand computation") {
    // means 2 and 5, variances 1 and 4, n 3 and 4.
    auto r = welch_t_test({1, 2, 3}, {3, 3, 7, 7});
    const double va = 1.0 / 3, vb = (16.0 / 3) / 4;
    CHECK(r.statistic == doctest::Approx(-3 / std::sqrt(va + vb)).epsilon(1e-12));
    CHECK(r.df == doctest::Approx((va + vb) * (va + vb) / (va * va / 2 + vb * vb / 3)).epsilon(1e-12));
  }
  SUBCASE("planted mean difference agrees with a permutation test") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> a(0, 1), b(1, 1);
    std::vector<double> x(200), y(200);
    for (auto& v : x) v = a(rng);
    for (auto& v : y) v = b(rng);
    auto r = welch_t_test(x, y);
    CHECK(r.p < 0.01);
    // Permutation oracle on the absolute mean difference.
    std::vector<double> pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());
    const double observed = std::abs(mean_sd(x).mean - mean_sd(y).mean);
    int extreme = 0;
    const int perms = 2000;
    for (int k = 0; k < perms; ++k) {
      std::shuffle(pooled.begin(), pooled.end(), rng);
      const double m1 = std::accumulate(pooled.begin(), pooled.begin() + 200, 0.0) / 200;
      const double m2 = std::accumulate(pooled.begin() + 200, pooled.end(), 0.0) / 200;
      if (std::abs(m1 - m2) >= observed) ++extreme;
    }
    CHECK((extreme + 1.0) / (perms + 1.0) < 0.01);
  }
  SUBCASE("chi-square") {
    auto c = chi_square_2x2(10, 20, 30, 40);
    // expected 12, 18, 28, 42
    const double chi = 4.0 / 12 + 4.0 / 18 + 4.0 / 28 + 4.0 / 42;
    CHECK(c.statistic == doctest::Approx(chi).epsilon(1e-12));
    CHECK(c.p == doctest::Approx(std::erfc(std::sqrt(chi / 2))).epsilon(1e-10));
    CHECK(chi_square_2x2(5, 5, 5, 5).p == doctest::Approx(1.0));
    CHECK(std::isnan(chi_square_2x2(5, 0, 5, 0).p));
  }
}

TEST_CASE("group summary") {
  std::vector<SubjectRecord> recs;
  for (int i = 0; i < 8; ++i) {
    SubjectRecord r;
    r.subject_id = "S" + std::to_string(i);
    r.label = i < 4 ? Label::cn : Label::mci;
    r.demographics = {70.0 + i, i % 2 ? Sex::female : Sex::male, 12};
    if (i != 0) r.mmse = 28 - i;
    recs.push_back(r);
  }
  auto g = group_summary(recs);
  CHECK(g.n[0] == 4);
  CHECK(g.n[1] == 4);
  CHECK(g.rows[0].field == "age");
  CHECK(g.rows[0].group[0].mean == 71.5);
  CHECK(g.rows[1].categorical);
  CHECK(g.rows[1].count[0] == 2);
  auto mmse = std::find_if(g.rows.begin(), g.rows.end(), [](const GroupRow& r) { return r.field == "mmse"; });
  REQUIRE(mmse != g.rows.end());
  CHECK(mmse->group[0].n == 3);
  CHECK(std::none_of(g.rows.begin(), g.rows.end(), [](const GroupRow& r) { return r.field == "ai_copy"; }));
  // constant education: zero-variance Welch case
  auto edu = std::find_if(g.rows.begin(), g.rows.end(), [](const GroupRow& r) { return r.field == "education"; });
  CHECK(edu->test.p == 1.0);
  CHECK(g.to_csv().rfind("field,group,n,mean,sd,count,percent,statistic,p\nage,CN,4,71.5,", 0) == 0);
  CHECK(g.to_text().find("71.5 (1.3)") != std::string::npos);
  CHECK(group_summary(recs, "sex").group_names[0] == "female");
  CHECK_THROWS_AS(group_summary(recs, "height"), ConfigError);
  recs.resize(5);
  CHECK_THROWS_AS(group_summary(recs), StatisticsError);
}

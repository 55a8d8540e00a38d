#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "mstream/fusion.hpp"
#include "mstream/image.hpp"
#include "mstream/ops.hpp"
#include "oracles.hpp"

using namespace mstream;

namespace {

SubjectRecord subject(const std::string& id, ScoreTriple ai) {
  SubjectRecord r;
  r.subject_id = id;
  r.demographics = {70, Sex::female, 12};
  r.ai_scores = ai;
  return r;
}

std::vector<ScoringInput> random_inputs(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> score(0, 36), age(55, 90), edu(0, 20);
  std::vector<ScoringInput> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({{score(rng), score(rng), score(rng)}, {age(rng), rng() % 2 ? Sex::female : Sex::male, edu(rng)}});
  }
  return out;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.backbone.input_size = 16;
  cfg.backbone.stem_channels = 4;
  cfg.backbone.stages = parse_stages("1:3:1:4:1,2:3:2:8:1");
  cfg.attention.fc1_width = 8;
  return cfg;
}

std::array<Tensor, 3> random_images(std::size_t side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::array<Tensor, 3> out;
  for (auto& t : out) {
    std::vector<double> v(side * side);
    for (auto& x : v) x = u(rng);
    t = Tensor::from({1, side, side}, v);
  }
  return out;
}

Tensor stack_images(const std::array<Tensor, 3>& imgs) {
  std::vector<Tensor> parts;
  for (const auto& t : imgs) parts.push_back(reshape(t, {1, 1, t.size(1), t.size(2)}));
  return concat(parts, 0);
}

}  // namespace

TEST_CASE("file-backed scorer passes manifest values through") {
  FileScorer scorer;
  CHECK(score_images(scorer, subject("a", {32, 15, 14}), {}) == ScoreTriple{32, 15, 14});
  SubjectRecord missing = subject("b", {});
  missing.ai_scores.reset();
  CHECK_THROWS_WITH_AS(score_images(scorer, missing, {}), doctest::Contains("b"), DataError);
}

TEST_CASE("stub scorer") {
  StubScorer stub;
  std::array<Tensor, 3> blank{Tensor::zeros({1, 8, 8}), Tensor::zeros({1, 8, 8}), Tensor::zeros({1, 8, 8})};
  CHECK(score_images(stub, subject("a", {}), blank) == ScoreTriple{0, 0, 0});
  CHECK_THROWS_AS(score_images(stub, subject("a", {}), {blank[0], Tensor(), blank[2]}), DataError);

  // Monotone in ink fraction over generated pairs.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto make = [&](std::size_t inked) {
      std::vector<double> v(64, 0.0);
      for (std::size_t i = 0; i < inked; ++i) v[rng() % 64] = 1.0;
      return Tensor::from({1, 8, 8}, v);
    };
    Tensor a = make(rng() % 30), b = make(rng() % 30);
    if (ink_fraction(a, 0.25) > ink_fraction(b, 0.25)) {
      CHECK(stub.score_image(a) >= stub.score_image(b));
    } else {
      CHECK(stub.score_image(a) <= stub.score_image(b));
    }
    CHECK(stub.score_image(a) <= 36.0);
  }
  ParamList list;
  stub.collect("scorer", list);
  REQUIRE(list.size() == 2);
  for (const auto& p : list) CHECK(p.role == ParamRole::frozen);
}

TEST_CASE("freeze check compares scorer bytes") {
  StubScorer stub;
  const std::string before = scorer_state(stub);
  CHECK(assert_frozen(before, scorer_state(stub)));
  StubScorer perturbed;
  perturbed.saturation.set(0, std::nextafter(0.15, 1.0));
  CHECK_FALSE(assert_frozen(before, scorer_state(perturbed)));
}

TEST_CASE("feature normalizer") {
  std::mt19937_64 rng(4);
  auto norm = FeatureNormalizer::init(DType::f64);
  auto inputs = random_inputs(20, rng);
  CHECK_THROWS_AS(norm.transform(inputs), StateError);
  norm.fit(inputs, SplitRole::train);
  CHECK_FALSE(norm.audit_violation);
  Tensor f = norm.transform(inputs);
  CHECK(f.shape() == Shape{20, 6});
  CHECK_FALSE(f.requires_grad());
  for (std::size_t col : {0, 1, 2, 3, 5}) {
    double m = 0, ss = 0;
    for (std::size_t i = 0; i < 20; ++i) m += f.at(i * 6 + col) / 20.0;
    for (std::size_t i = 0; i < 20; ++i) ss += std::pow(f.at(i * 6 + col) - m, 2);
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::sqrt(ss / 19.0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < 20; ++i) CHECK(f.at(i * 6 + 4) == (inputs[i].demographics.sex == Sex::female ? 1.0 : 0.0));

  norm.fit(random_inputs(10, rng), SplitRole::validation);
  CHECK(norm.audit_violation);
}

TEST_CASE("scoring stream forward") {
  std::mt19937_64 gen(5);
  Rng rng(6);
  auto stream = ScoringStream::init(rng, DType::f64);
  auto inputs = random_inputs(12, gen);
  stream.normalizer.fit(inputs, SplitRole::train);

  SUBCASE("zero weights give one half") {
    auto z = stream;
    z.fc = Dense{Tensor::zeros({6, 2}), Tensor::zeros({2})};
    for (const auto& in : inputs) CHECK(z.forward_one(in) == std::array<double, 2>{0.5, 0.5});
  }
  SUBCASE("matches hand evaluation of the affine map and softmax") {
    Tensor f = stream.normalizer.transform(inputs);
    Tensor p = stream.forward(f);
    auto w = stream.fc.weight.values(), b = stream.fc.bias.values();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      std::vector<double> logits(2);
      for (std::size_t k = 0; k < 2; ++k) {
        logits[k] = b[k];
        for (std::size_t j = 0; j < 6; ++j) logits[k] += f.at(i * 6 + j) * w[j * 2 + k];
      }
      auto ref = oracle::softmax(logits);
      CHECK(p.at(i * 2) == doctest::Approx(ref[0]).epsilon(1e-13));
      CHECK(p.at(i * 2 + 1) == doctest::Approx(ref[1]).epsilon(1e-13));
      CHECK(std::abs(p.at(i * 2) + p.at(i * 2 + 1) - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(stream.forward(Tensor::zeros({2, 5})), DimensionError);
}

TEST_CASE("fuse") {
  auto f = fuse({0.6, 0.4}, {0.8, 0.2});
  CHECK(f[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(f[1] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(fuse({0.25, 0.75}, {0.25, 0.75}) == std::array<double, 2>{0.25, 0.75});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng);
    CHECK(fuse({a, 1 - a}, {b, 1 - b}) == fuse({b, 1 - b}, {a, 1 - a}));
  }
  CHECK_THROWS_AS(fuse({0.6, 0.5}, {0.5, 0.5}), ContractError);
  CHECK_NOTHROW(fuse({0.5 + 5e-7, 0.5}, {0.5, 0.5}));
}

TEST_CASE("decision rule") {
  CHECK(decide(0.5, 0.5) == Label::mci);
  CHECK(decide(std::nextafter(0.5, 0.0), 0.5) == Label::cn);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) {
    const double p = u(rng), t1 = u(rng), t2 = t1 + u(rng) * (1 - t1);
    if (decide(p, t1) == Label::cn) CHECK(decide(p, t2) == Label::cn);
    // At 0.5 the threshold rule equals argmax with ties to MCI.
    CHECK((decide(p, 0.5) == Label::mci) == (p >= 1 - p));
  }
}

TEST_CASE("model config fingerprint") {
  auto a = tiny_config();
  auto b = a;
  CHECK(a.fingerprint() == b.fingerprint());
  b.attention.fc1_width = 9;
  CHECK(a.fingerprint() != b.fingerprint());
  auto parsed = ModelConfig::from_config(Config::parse(a.canonical()));
  CHECK(parsed.canonical() == a.canonical());
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("multi-stream model") {
  std::mt19937_64 gen(9);
  auto model = MultiStreamModel::init(tiny_config(), 11);
  auto inputs = random_inputs(4, gen);
  model.scoring.normalizer.fit(inputs, SplitRole::train);

  SUBCASE("parameter roles") {
    auto params = model.parameters();
    std::set<std::string> names;
    for (const auto& p : params) {
      CHECK(names.insert(p.name).second);
      if (p.role == ParamRole::frozen) CHECK(p.name.rfind("scorer.", 0) == 0);
      if (p.name.rfind("scorer.", 0) == 0) CHECK(p.role == ParamRole::frozen);
    }
    auto stub_model = tiny_config();
    stub_model.scorer = "stub";
    std::size_t frozen = 0;
    for (const auto& p : MultiStreamModel::init(stub_model, 1).parameters()) frozen += p.role == ParamRole::frozen;
    CHECK(frozen == 2);
  }
  SUBCASE("final output is exactly the mean of the stream outputs") {
    std::vector<Tensor> all;
    std::vector<std::array<Tensor, 3>> subjects;
    for (int i = 0; i < 4; ++i) {
      subjects.push_back(random_images(16, gen));
      all.push_back(stack_images(subjects.back()));
    }
    auto out = model.forward(concat(all, 0), model.scoring.normalizer.transform(inputs), Mode::train);
    auto eval = model.forward(concat(all, 0), model.scoring.normalizer.transform(inputs), Mode::eval);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(std::abs(eval.final.at(i) - 0.5 * (eval.spatial.at(i) + eval.scoring.at(i))) <= 1e-12);
    }
    // Recompute each stream independently for one subject.
    SubjectRecord rec = subject("x", inputs[2].scores);
    rec.demographics = inputs[2].demographics;
    auto pred = predict(model, rec, subjects[2]);
    auto ps = model.spatial.forward_subject(subjects[2], Mode::eval);
    auto pc = model.scoring.forward_one(inputs[2]);
    CHECK(std::abs(pred.p_final[1] - 0.5 * (ps[1] + pc[1])) <= 1e-12);
    CHECK(pred.p_spatial == ps);
    CHECK(pred.p_scoring == pc);
    CHECK(std::abs(pred.p_final[0] + pred.p_final[1] - 1.0) < 1e-9);
    CHECK(pred.label == decide(pred.p_final[1], 0.5));
    (void)out;
  }
  SUBCASE("missing data names subject and field") {
    SubjectRecord rec = subject("S77", {1, 2, 3});
    auto imgs = random_images(16, gen);
    imgs[2] = Tensor();
    CHECK_THROWS_WITH_AS(predict(model, rec, imgs), doctest::Contains("S77"), DataError);
    CHECK_THROWS_WITH_AS(predict(model, rec, imgs), doctest::Contains("delayed"), DataError);
    rec.ai_scores.reset();
    CHECK_THROWS_WITH_AS(predict(model, rec, random_images(16, gen)), doctest::Contains("S77"), DataError);
  }
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 gen(10);
  auto cfg = tiny_config();
  cfg.scorer = "stub";
  auto model = MultiStreamModel::init(cfg, 12);
  model.scoring.normalizer.fit(random_inputs(6, gen), SplitRole::train);
  auto imgs = random_images(16, gen);
  model.spatial.forward_subject(imgs, Mode::train);  // move running statistics

  const std::string bytes = save_checkpoint(model);
  auto loaded = load_checkpoint(bytes, cfg.fingerprint());
  CHECK(save_checkpoint(loaded) == bytes);
  auto a = model.parameters(), b = loaded.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].role == b[i].role);
    CHECK(a[i].tensor.values() == b[i].tensor.values());
  }
  SubjectRecord rec = subject("r", {});
  auto p1 = predict(model, rec, imgs), p2 = predict(loaded, rec, imgs);
  CHECK(p1.p_final == p2.p_final);
  CHECK(p1.p_spatial == p2.p_spatial);

  SUBCASE("float32 models round trip too") {
    auto c32 = cfg;
    c32.dtype = DType::f32;
    auto m32 = MultiStreamModel::init(c32, 3);
    const auto b32 = save_checkpoint(m32);
    CHECK(save_checkpoint(load_checkpoint(b32)) == b32);
  }
  SUBCASE("altered fingerprint") {
    std::string bad = bytes;
    const auto pos = bad.find("fingerprint ") + 12;
    bad[pos] = bad[pos] == '0' ? '1' : '0';
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
  }
  SUBCASE("fingerprint of a different configuration") {
    auto other = cfg;
    other.attention.fc1_width = 16;
    CHECK_THROWS_AS(load_checkpoint(bytes, other.fingerprint()), CheckpointError);
  }
  SUBCASE("corruption") {
    CHECK_THROWS_AS(load_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(bytes + "x"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint("garbage"), CheckpointError);
    std::string edited = bytes;
    edited.replace(edited.find("fc1_width = 8"), 13, "fc1_width = 9");
    CHECK_THROWS_AS(load_checkpoint(edited), CheckpointError);
  }
}

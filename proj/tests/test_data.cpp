#include <filesystem>
#include <random>

#include "doctest.h"
#include "mstream/errors.hpp"
#include "mstream/synthetic.hpp"
#include "test_util.hpp"

using namespace mstream;

namespace {

const char* kHeader =
    "subject_id,age,sex,education,mmse,cdr,label,expert_copy,expert_imm,expert_del,ai_copy,ai_imm,ai_del,img_copy,"
    "img_imm,img_del\n";

}  // namespace

TEST_CASE("manifest parsing and validation") {
  std::string text = std::string("# provenance: hand written\n") + kHeader +
                     "A1,70,female,12,28,0,CN,32,15,14,31,16,14,a.png,b.png,c.png\n"
                     "A2,75,male,8,,0.5,MCI,,,,20,10,9,,,\n"
                     "A3,66,F,16,30,,CN,36,36,36,,,,x.png,y.png,z.png\n";
  auto m = parse_manifest(text, "/data");
  REQUIRE(m.records.size() == 3);
  CHECK(m.provenance == "hand written");
  CHECK(m.records[0].expert_scores == ScoreTriple{32, 15, 14});
  CHECK_FALSE(m.records[1].mmse.has_value());
  CHECK_FALSE(m.records[1].expert_scores.has_value());
  CHECK(m.records[1].label == Label::mci);
  CHECK(m.image_path(m.records[0], Condition::immediate) == std::filesystem::path("/data/b.png"));
  CHECK_THROWS_AS(m.image_path(m.records[1], Condition::copy), DataError);

  SUBCASE("round trip is lossless") {
    auto again = parse_manifest(format_manifest(m), "/data");
    CHECK(again.records == m.records);
    CHECK(format_manifest(again) == format_manifest(m));
  }
  SUBCASE("a score of 37 names the row") {
    std::string bad = std::string(kHeader) + "A1,70,female,12,28,0,CN,32,15,14,31,16,14,a,b,c\n" +
                      "A2,70,female,12,28,0,CN,37,15,14,31,16,14,a,b,c\n";
    try {
      parse_manifest(bad, ".");
      FAIL("expected a range error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
      CHECK(std::string(e.what()).find("outside [0, 36]") != std::string::npos);
    }
  }
  SUBCASE("duplicate ids") {
    std::string bad = std::string(kHeader) + "A1,70,female,12,28,0,CN,,,,,,,a,b,c\nA1,71,male,12,28,0,CN,,,,,,,a,b,c\n";
    CHECK_THROWS_WITH_AS(parse_manifest(bad, "."), doctest::Contains("duplicate"), DataError);
  }
  SUBCASE("missing column") {
    CHECK_THROWS_AS(parse_manifest("subject_id,age\nA,70\n", "."), FormatError);
  }
  SUBCASE("cdr contradicting the label") {
    std::string bad = std::string(kHeader) + "A1,70,female,12,28,0.5,CN,,,,,,,a,b,c\n";
    CHECK_THROWS_AS(parse_manifest(bad, "."), DataError);
  }
  SUBCASE("age out of range") {
    std::string bad = std::string(kHeader) + "A1,30,female,12,28,0,CN,,,,,,,a,b,c\n";
    CHECK_THROWS_AS(parse_manifest(bad, "."), DataError);
  }
  SUBCASE("partial triple") {
    std::string bad = std::string(kHeader) + "A1,70,female,12,28,0,CN,1,,,,,,a,b,c\n";
    CHECK_THROWS_AS(parse_manifest(bad, "."), DataError);
  }
}

TEST_CASE("load_manifest requires referenced images") {
  TempDir dir;
  write_text_file(dir.path / "m.csv", std::string(kHeader) + "A1,70,female,12,28,0,CN,,,,,,,a.png,,\n");
  CHECK_THROWS_AS(load_manifest(dir.path / "m.csv"), DataError);
  CHECK(load_manifest(dir.path / "m.csv", false).records.size() == 1);
  CHECK_THROWS_AS(load_manifest(dir.path / "missing.csv"), DataError);
}

TEST_CASE("png round trip and decoding errors") {
  TempDir dir;
  RasterImage img;
  img.width = 5;
  img.height = 3;
  for (int i = 0; i < 15; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  write_png(dir.path / "g.png", img);
  auto back = read_png(dir.path / "g.png");
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  CHECK(back.channels == 1);
  CHECK(back.pixels == img.pixels);

  write_text_file(dir.path / "junk.png", "not a png");
  CHECK_THROWS_AS(read_png(dir.path / "junk.png"), FormatError);
}

TEST_CASE("preprocessing") {
  SUBCASE("blank page maps to zeros") {
    RasterImage white{40, 30, 1, std::vector<std::uint8_t>(1200, 255)};
    auto t = preprocess_image(white, 16);
    CHECK(t.shape() == Shape{1, 16, 16});
    for (double v : t.values()) CHECK(v == 0.0);
  }
  SUBCASE("300 x 200 at 64 gives a centred 64 x 43 box") {
    auto box = content_box(300, 200, 64);
    CHECK(box.width == 64);
    CHECK(box.height == 43);
    CHECK(box.offset_x == 0);
    CHECK(box.offset_y == 10);
    RasterImage black{300, 200, 1, std::vector<std::uint8_t>(60000, 0)};
    auto t = preprocess_image(black, 64);
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const bool inside = y >= 10 && y < 53;
        CHECK(t.at(y * 64 + x) == doctest::Approx(inside ? 1.0 : 0.0).epsilon(1e-12));
      }
  }
  SUBCASE("colour uses luma") {
    RasterImage red{1, 1, 3, {255, 0, 0}};
    CHECK(preprocess_image(red, 1).item() == doctest::Approx(1.0 - 0.299).epsilon(1e-12));
  }
  SUBCASE("idempotent, in range, right shape") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
      RasterImage img;
      img.width = 10 + rng() % 60;
      img.height = 10 + rng() % 60;
      img.channels = trial % 2 ? 3 : 1;
      for (std::size_t i = 0; i < img.width * img.height * img.channels; ++i) img.pixels.push_back(rng() % 256);
      auto once = preprocess_image(img, 32);
      CHECK(once.shape() == Shape{1, 32, 32});
      for (double v : once.values()) CHECK((v >= 0.0 && v <= 1.0));
      CHECK(preprocess_image(once, 32).values() == once.values());
    }
  }
  SUBCASE("area resize preserves mean ink") {
    RasterImage img{8, 8, 1, {}};
    for (int i = 0; i < 64; ++i) img.pixels.push_back(i % 3 == 0 ? 0 : 255);
    auto big = preprocess_image(img, 8);
    auto small = preprocess_image(img, 4);
    double a = 0, b = 0;
    for (double v : big.values()) a += v / 64.0;
    for (double v : small.values()) b += v / 16.0;
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("synthetic cohort generator") {
  SyntheticParams p;
  p.n = 40;
  p.seed = 5;
  p.image_size = 64;
  p.gross_errors = 7;

  SUBCASE("same seed gives byte-identical outputs") {
    TempDir a, b;
    write_synthetic_cohort(generate_synthetic_cohort(p), a.path);
    write_synthetic_cohort(generate_synthetic_cohort(p), b.path);
    for (const char* f : {"manifest.csv", "qc_scores.csv", "qc_truth.csv", "images/S0001_copy.png", "images/S0040_delayed.png"}) {
      CHECK(read_text_file(a.path / f) == read_text_file(b.path / f));
    }
    auto m = load_manifest(a.path / "manifest.csv");
    CHECK(m.records.size() == 40);
    auto img = read_png(m.image_path(m.records[3], Condition::delayed));
    CHECK(img.width == 64);
  }
  SUBCASE("construction invariants") {
    auto c = generate_synthetic_cohort(p);
    std::size_t mci = 0, gross = 0;
    for (const auto& s : c.subjects) {
      mci += s.record.label == Label::mci;
      s.record.validate("synthetic");
      for (Condition cond : kConditions) {
        const double e = (*s.record.expert_scores)[cond], a = (*s.record.ai_scores)[cond];
        CHECK(std::fmod(e, 2.0) == 0.0);
        CHECK((e >= 0 && e <= 36));
        CHECK((a >= 0 && a <= 36));
        gross += std::abs(e - a) > 10.0;
      }
    }
    CHECK(mci == 20);
    CHECK(gross == 7);
    CHECK(c.gross_errors.size() == 7);
  }
  SUBCASE("CN subjects draw better copies on average") {
    SyntheticParams big = p;
    big.n = 200;
    big.gross_errors = 0;
    big.render_images = false;
    auto c = generate_synthetic_cohort(big);
    double cn = 0, mci = 0;
    for (const auto& s : c.subjects) (s.record.label == Label::cn ? cn : mci) += s.record.expert_scores->copy / 100.0;
    CHECK(cn > mci);
    // Copy is the easiest condition.
    double copy = 0, delayed = 0;
    for (const auto& s : c.subjects) copy += s.record.expert_scores->copy, delayed += s.record.expert_scores->delayed;
    CHECK(copy > delayed);
  }
  SUBCASE("config round trip") {
    SyntheticParams q = p;
    q.render_images = false;
    q.motor_effect = 2.25;
    Config cfg;
    q.write(cfg);
    auto r = SyntheticParams::from_config(Config::parse(cfg.serialize()));
    CHECK(r.n == q.n);
    CHECK(r.seed == q.seed);
    CHECK(r.gross_errors == q.gross_errors);
    CHECK(r.motor_effect == q.motor_effect);
    CHECK(!r.render_images);
  }
  SUBCASE("parameter validation") {
    SyntheticParams bad = p;
    bad.n = 5;
    CHECK_THROWS_AS(generate_synthetic_cohort(bad), ConfigError);
    bad = p;
    bad.ai_noise_sd = -1;
    CHECK_THROWS_AS(generate_synthetic_cohort(bad), ConfigError);
  }
}

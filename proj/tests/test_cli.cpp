#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mstream/manifest.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

// Runs the CLI with output discarded; returns its exit status.
int run(const std::string& args) {
  const std::string cmd = std::string("\"") + MSTREAM_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) { return mstream::read_text_file(p); }

std::size_t data_rows(const fs::path& csv) {
  std::istringstream in(slurp(csv));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n == 0 ? 0 : n - 1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("gen-data writes a deterministic cohort") {
  TempDir dir;
  const auto a = dir.path / "a", b = dir.path / "b";
  REQUIRE(run("gen-data --n 24 --seed 7 --image-size 32 --out " + q(a)) == 0);
  REQUIRE(run("gen-data --n 24 --seed 7 --image-size 32 --out " + q(b)) == 0);
  CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(a / "images")) {
    ++images;
    CHECK(slurp(e.path()) == slurp(b / "images" / e.path().filename()));
  }
  CHECK(images == 72);
  CHECK(fs::exists(a / "resolved_config.ini"));
  CHECK(slurp(a / "resolved_config.ini").find("seed = 7") != std::string::npos);
}

TEST_CASE("exit codes") {
  TempDir dir;
  CHECK(run("gen-data --n 5 --out " + q(dir.path / "small")) == 2);
  CHECK(!fs::exists(dir.path / "small"));
  CHECK(run("gen-data --n 30 --bogus --out " + q(dir.path / "x")) == 2);
  CHECK(run("--set synthetic.colour=red gen-data --n 30 --out " + q(dir.path / "x")) == 2);
  CHECK(run("--set nodot gen-data --n 30 --out " + q(dir.path / "x")) == 2);
  CHECK(run("train --manifest " + q(dir.path / "missing.csv") + " --out " + q(dir.path / "t")) == 3);
  mstream::write_text_file(dir.path / "bad.csv", "image_id,condition,expert_score\nS1_copy,copy,3\n");
  CHECK(run("qc --scores " + q(dir.path / "bad.csv") + " --out " + q(dir.path / "q")) == 3);
  CHECK(run("eval --out " + q(dir.path / "e")) == 2);
}

TEST_CASE("relative output paths resolve under MSTREAM_OUT_ROOT") {
  TempDir dir;
  ::setenv("MSTREAM_OUT_ROOT", dir.path.c_str(), 1);
  const int code = run("gen-data --n 20 --no-images --out rel");
  ::unsetenv("MSTREAM_OUT_ROOT");
  CHECK(code == 0);
  CHECK(fs::exists(dir.path / "rel" / "manifest.csv"));
}

TEST_CASE("eval, train and external evaluation") {
  TempDir dir;
  const auto d = dir.path / "cohort";
  REQUIRE(run("gen-data --n 40 --seed 3 --image-size 32 --out " + q(d)) == 0);
  const std::string small = "--set backbone.input_size=32 --set train.max_epochs=3 --set train.patience=2 ";

  SUBCASE("stub repeats") {
    const auto out = dir.path / "stub";
    REQUIRE(run(small + "eval --stub --repeats 3 --manifest " + q(d / "manifest.csv") + " --out " + q(out)) == 0);
    CHECK(data_rows(out / "metrics_repeats.csv") == 3);
    CHECK(data_rows(out / "metrics_summary.csv") == 4);
    CHECK(slurp(out / "table.txt").find("Only scoring stream") != std::string::npos);
    CHECK(slurp(out / "resolved_config.ini").find("scorer = stub") != std::string::npos);
    CHECK(fs::exists(out / "roc_only_scoring_stream.csv"));
    CHECK(fs::exists(out / "checkpoint_only_scoring_stream.bin"));
    CHECK(fs::exists(out / "group_summary.csv"));
  }

  SUBCASE("external mode reads a checkpoint and writes none") {
    const auto t = dir.path / "train";
    REQUIRE(run(small + "--set model.fusion=scoring-only train --manifest " + q(d / "manifest.csv") + " --out " + q(t)) ==
            0);
    for (const char* f : {"checkpoint.bin", "history.csv", "test_metrics.csv", "test_predictions.csv"}) {
      CHECK(fs::exists(t / f));
    }
    const auto e = dir.path / "external";
    REQUIRE(run("eval --external-manifest " + q(d / "manifest.csv") + " --checkpoint " + q(t / "checkpoint.bin") +
                " --out " + q(e)) == 0);
    CHECK(data_rows(e / "external_predictions.csv") == 40);
    CHECK(fs::exists(e / "external_metrics.csv"));
    CHECK(fs::exists(e / "external_roc.csv"));
    for (const auto& f : fs::directory_iterator(e)) CHECK(f.path().extension() != ".bin");
    CHECK(run("eval --external-manifest " + q(d / "manifest.csv") + " --out " + q(e)) == 2);
  }

  SUBCASE("preprocess output is a fixed point") {
    const auto p1 = dir.path / "p1", p2 = dir.path / "p2";
    const auto before = slurp(d / "manifest.csv");
    REQUIRE(run("preprocess --size 48 --manifest " + q(d / "manifest.csv") + " --out " + q(p1)) == 0);
    REQUIRE(run("preprocess --size 48 --manifest " + q(p1 / "manifest.csv") + " --out " + q(p2)) == 0);
    CHECK(slurp(d / "manifest.csv") == before);
    std::size_t n = 0;
    for (const auto& f : fs::directory_iterator(p1 / "images")) {
      ++n;
      CHECK(slurp(f.path()) == slurp(p2 / "images" / f.path().filename()));
    }
    CHECK(n == 120);
    CHECK(run("preprocess --manifest " + q(d / "manifest.csv") + " --out " + q(d)) == 2);
  }
}

TEST_CASE("qc on the planted-error fixture") {
  TempDir dir;
  const auto d = dir.path / "cohort";
  REQUIRE(run("gen-data --n 200 --seed 11 --gross-errors 30 --no-images --out " + q(d)) == 0);
  const auto before = dir.path / "before";
  REQUIRE(run("qc --scores " + q(d / "qc_scores.csv") + " --out " + q(before)) == 0);
  CHECK(data_rows(before / "qc_flags.csv") == 30);
  CHECK(data_rows(before / "qc_summary.csv") == 1);
  CHECK(!fs::exists(before / "qc_audit.csv"));

  const auto after = dir.path / "after";
  REQUIRE(run("qc --scores " + q(d / "qc_scores.csv") + " --corrections " + q(d / "qc_truth.csv") + " --out " +
              q(after)) == 0);
  CHECK(data_rows(after / "qc_summary.csv") == 2);
  CHECK(data_rows(after / "qc_audit.csv") == 30);
  CHECK(data_rows(after / "corrected_scores.csv") == 600);
  CHECK(slurp(after / "qc_summary.csv").find("after,600,") != std::string::npos);
}

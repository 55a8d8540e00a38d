// mstream: synthetic cohorts, preprocessing, training, repeated evaluation
// and score QC from the command line.
//
// Exit codes: 0 ok, 2 configuration, 3 data, 4 numeric, 1 anything else
// (including failed evaluation repeats).

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mstream/image.hpp"
#include "mstream/run_config.hpp"
#include "mstream/stats.hpp"

namespace fs = std::filesystem;
using namespace mstream;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
};

// Config file, then --set overrides, then the subcommand's own flags.
Config base_config(const Globals& g) {
  Config cfg = g.config_path.empty() ? Config{} : Config::load(g.config_path);
  apply_overrides(cfg, g.overrides);
  return cfg;
}

template <typename T>
void set_if(Config& cfg, const std::string& section, const std::string& key, const std::optional<T>& value) {
  if (!value) return;
  if constexpr (std::is_same_v<T, double>) {
    cfg.set(section, key, format_double(*value));
  } else if constexpr (std::is_same_v<T, std::string>) {
    cfg.set(section, key, *value);
  } else {
    cfg.set(section, key, std::to_string(*value));
  }
}

fs::path output_dir(const std::string& out) {
  const char* root = std::getenv("MSTREAM_OUT_ROOT");
  return resolve_output(out, root ? fs::path(root) : fs::path());
}

RunConfig finish(Config& cfg, const fs::path& out) {
  cfg.set("run", "out_dir", out.string());
  auto rc = RunConfig::from_config(cfg);
  fs::create_directories(out);
  write_text_file(out / "resolved_config.ini", rc.resolved());
  return rc;
}

std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!s.empty() && s.back() != '_') {
      s += '_';
    }
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

std::vector<int> labels_of(const CohortManifest& m) {
  std::vector<int> y;
  for (const auto& r : m.records) y.push_back(r.label == Label::mci ? 1 : 0);
  return y;
}

std::string predictions_csv(const RepeatOutcome& o, double threshold) {
  std::ostringstream out;
  out << "subject_id,label,p_mci,predicted\n";
  for (std::size_t i = 0; i < o.scores.size(); ++i) {
    out << o.ids[i] << ',' << o.labels[i] << ',' << format_double(o.scores[i]) << ','
        << (o.scores[i] >= threshold ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string point_metrics_csv(const RepeatOutcome& o, double threshold) {
  const auto m = compute_metrics(o.scores, o.labels, threshold);
  std::ostringstream out;
  out << "metric,value\n";
  out << "n," << o.scores.size() << '\n';
  out << "auc," << format_double(auc(o.scores, o.labels)) << '\n';
  out << "acc," << format_double(m.acc) << '\n';
  out << "sen," << format_double(m.sen) << '\n';
  out << "spe," << format_double(m.spe) << '\n';
  out << "threshold," << format_double(threshold) << '\n';
  return out.str();
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::optional<int> n, image_size, gross_errors;
  std::optional<std::uint64_t> seed;
  bool no_images = false;
  std::string out;
};

int cmd_gen_data(const Globals& g, const GenArgs& a) {
  Config cfg = base_config(g);
  set_if(cfg, "synthetic", "n", a.n);
  set_if(cfg, "synthetic", "seed", a.seed);
  set_if(cfg, "synthetic", "image_size", a.image_size);
  set_if(cfg, "synthetic", "gross_errors", a.gross_errors);
  if (a.no_images) cfg.set("synthetic", "render_images", "false");
  // Validate before touching the output directory.
  SyntheticParams::from_config(cfg).validate();
  const auto out = output_dir(a.out);
  auto rc = finish(cfg, out);
  const auto manifest = write_synthetic_cohort(generate_synthetic_cohort(rc.synthetic), out);
  std::cout << "wrote " << manifest.records.size() << " subjects to " << (out / "manifest.csv").string() << '\n'
            << rc.synthetic.describe() << '\n';
  return kOk;
}

// -------------------------------------------------------------- preprocess

struct PreprocessArgs {
  std::string manifest, out;
  std::optional<int> size;
};

int cmd_preprocess(const Globals& g, const PreprocessArgs& a) {
  Config cfg = base_config(g);
  set_if(cfg, "backbone", "input_size", a.size);
  const auto out = output_dir(a.out);
  auto manifest = load_manifest(a.manifest);
  if (fs::exists(out) && fs::equivalent(out, manifest.base_dir)) {
    throw ConfigError("preprocess output must not be the input manifest's directory");
  }
  auto rc = finish(cfg, out);
  const std::size_t size = rc.model.backbone.input_size;
  CohortManifest result = manifest;
  result.base_dir = out;
  result.provenance = manifest.provenance + (manifest.provenance.empty() ? "" : "; ") + "preprocessed to " +
                      std::to_string(size) + "x" + std::to_string(size);
  for (auto& r : result.records) {
    for (Condition c : kConditions) {
      const auto ci = static_cast<std::size_t>(c);
      const auto src = manifest.image_path(r, c);
      const fs::path rel = fs::path("images") / src.filename();
      write_png(out / rel, to_raster(preprocess_image(read_png(src), size)));
      r.image_paths[ci] = rel.generic_string();
    }
  }
  save_manifest(result, out / "manifest.csv");
  std::cout << "preprocessed " << 3 * result.records.size() << " images to " << size << "x" << size << " in "
            << out.string() << '\n';
  return kOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest, out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  Config cfg = base_config(g);
  set_if(cfg, "run", "seed", a.seed);
  const auto out = output_dir(a.out);
  auto rc = RunConfig::from_config(cfg);
  const auto data = load_dataset(load_manifest(a.manifest), rc.model);
  rc = finish(cfg, out);
  const auto split = split_dataset(data.labels, rc.seed, {}, rc.eval.stratify);
  const auto art = run_model_repeat(data, rc.model, rc.train, split, rc.seed);
  write_text_file(out / "checkpoint.bin", art.checkpoint);
  write_text_file(out / "history.csv", art.history.to_csv());
  write_text_file(out / "test_metrics.csv", point_metrics_csv(art.outcome, rc.eval.threshold));
  write_text_file(out / "test_predictions.csv", predictions_csv(art.outcome, rc.eval.threshold));
  std::cout << "train " << split.train.size() << ", validation " << split.validation.size() << ", test "
            << split.test.size() << "; best epoch " << art.history.best_epoch << " of "
            << art.history.epochs.size() << "; test AUC " << format_double(auc(art.outcome.scores, art.outcome.labels))
            << '\n';
  return kOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string manifest, out, external_manifest, checkpoint;
  std::optional<int> repeats, jobs;
  std::optional<std::uint64_t> seed_base;
  std::optional<double> threshold;
  bool baselines = false;
  bool stub = false;
};

void write_group_summary(const CohortManifest& manifest, const fs::path& out) {
  try {
    const auto summary = group_summary(manifest.records, "label");
    write_text_file(out / "group_summary.csv", summary.to_csv());
    write_text_file(out / "group_summary.txt", summary.to_text());
  } catch (const StatisticsError& e) {
    write_text_file(out / "group_summary.txt", std::string("group summary unavailable: ") + e.what() + "\n");
  }
}

int cmd_eval_external(const EvalArgs& a, Config& cfg, const fs::path& out) {
  if (a.checkpoint.empty()) throw ConfigError("--external-manifest requires --checkpoint");
  auto model = load_checkpoint_file(a.checkpoint);
  model.config.write(cfg);
  auto rc = RunConfig::from_config(cfg);
  const auto data = load_dataset(load_manifest(a.external_manifest), model.config);
  rc = finish(cfg, out);
  const auto outcome = evaluate_model(model, data);
  write_text_file(out / "external_metrics.csv", point_metrics_csv(outcome, rc.eval.threshold));
  write_text_file(out / "external_predictions.csv", predictions_csv(outcome, rc.eval.threshold));
  write_text_file(out / "external_roc.csv", roc_points(outcome.scores, outcome.labels).to_csv());
  write_group_summary(data.manifest, out);
  std::cout << point_metrics_csv(outcome, rc.eval.threshold);
  return kOk;
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  Config cfg = base_config(g);
  set_if(cfg, "eval", "repeats", a.repeats);
  set_if(cfg, "eval", "jobs", a.jobs);
  set_if(cfg, "eval", "seed_base", a.seed_base);
  set_if(cfg, "eval", "threshold", a.threshold);
  if (a.stub) {
    cfg.set("model", "scorer", "stub");
    cfg.set("model", "fusion", "scoring-only");
  }
  const auto out = output_dir(a.out);
  if (!a.external_manifest.empty()) return cmd_eval_external(a, cfg, out);
  if (a.manifest.empty()) throw ConfigError("eval needs --manifest (or --external-manifest with --checkpoint)");

  auto rc = RunConfig::from_config(cfg);
  rc.eval.validate();
  const auto manifest = load_manifest(a.manifest);
  rc = finish(cfg, out);

  std::vector<ProtocolResult> rows;
  std::vector<SkippedRow> skipped;
  if (a.baselines) {
    auto suite = run_baseline_suite(manifest, rc.model, rc.train, rc.logistic, rc.eval);
    rows = std::move(suite.rows);
    skipped = std::move(suite.skipped);
  } else {
    const auto data = load_dataset(manifest, rc.model);
    rows.push_back(evaluate_deep(data, rc.model, rc.train, rc.eval, model_row_name(rc.model.mode)));
  }

  // Single aggregator: everything below runs after all repeats finished.
  std::string repeats_csv, summary_csv;
  std::vector<EvalReport> reports;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& row = rows[k];
    const auto& rep = row.report;
    reports.push_back(rep);
    repeats_csv += rep.repeats_csv(k == 0);
    summary_csv += rep.summary_csv(k == 0);
    const std::string name = slug(rep.name);
    write_text_file(out / ("roc_" + name + ".csv"), rep.median_roc().to_csv());
    std::ostringstream preds;
    preds << "repeat,subject_id,label,p_mci\n";
    for (std::size_t r = 0; r < rep.outcomes.size(); ++r) {
      const auto& o = rep.outcomes[r];
      for (std::size_t i = 0; i < o.scores.size(); ++i) {
        preds << r << ',' << o.ids[i] << ',' << o.labels[i] << ',' << format_double(o.scores[i]) << '\n';
      }
    }
    write_text_file(out / ("predictions_" + name + ".csv"), preds.str());
    const auto median = static_cast<std::size_t>(rep.median_repeat);
    if (!row.checkpoints.empty()) {
      write_text_file(out / ("checkpoint_" + name + ".bin"), row.median_checkpoint());
      write_text_file(out / ("history_" + name + ".csv"), row.histories.at(median).to_csv());
    }
    if (!row.coefficient_csvs.empty()) {
      write_text_file(out / ("coefficients_" + name + ".csv"), row.coefficient_csvs.at(median));
    }
  }
  write_text_file(out / "metrics_repeats.csv", repeats_csv);
  write_text_file(out / "metrics_summary.csv", summary_csv);
  const auto table = format_table(reports, skipped);
  write_text_file(out / "table.txt", table);
  write_group_summary(manifest, out);
  std::cout << table;
  return kOk;
}

// ---------------------------------------------------------------------- qc

struct QcArgs {
  std::string scores, corrections, out;
  std::optional<double> threshold;
  std::optional<std::string> r2;
};

int cmd_qc(const Globals& g, const QcArgs& a) {
  Config cfg = base_config(g);
  set_if(cfg, "qc", "threshold", a.threshold);
  set_if(cfg, "qc", "r_squared", a.r2);
  const auto out = output_dir(a.out);
  auto rc = RunConfig::from_config(cfg);
  const auto pairs = load_score_pairs(a.scores);
  const auto corrections = a.corrections.empty() ? std::vector<Correction>{} : load_corrections(a.corrections);
  rc = finish(cfg, out);
  QcReport report;
  if (a.corrections.empty()) {
    report = assess_scores(pairs, rc.qc.threshold, rc.qc.r_squared);
  } else {
    auto result = apply_corrections(pairs, corrections, rc.qc.threshold, rc.qc.r_squared);
    report = std::move(result.report);
    write_text_file(out / "corrected_scores.csv", format_score_pairs(result.corrected));
    write_text_file(out / "qc_audit.csv", report.audit_csv());
  }
  write_text_file(out / "qc_report.txt", report.to_text());
  write_text_file(out / "qc_summary.csv", report.summary_csv());
  write_text_file(out / "qc_flags.csv", report.flags_csv());
  std::cout << report.to_text();
  return kOk;
}

int classify(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const CheckpointError*>(&e)) return kData;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const StatisticsError*>(&e) ||
      dynamic_cast<const MetricError*>(&e)) {
    return kNumeric;
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kData;
  return kOther;
}

const char* kind_name(int code) {
  switch (code) {
    case kConfig:
      return "config error";
    case kData:
      return "data error";
    case kNumeric:
      return "numeric error";
    default:
      return "error";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-stream MCI classifier on drawing-test images"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI file with [section] key = value settings");
  app.add_option("--set", g.overrides, "Override a setting: section.key=value (repeatable)");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic cohort (manifest, images, QC fixtures)");
  gen_cmd->add_option("--n", gen.n, "Number of subjects (>= 20)");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--image-size", gen.image_size, "Rendered image side in pixels");
  gen_cmd->add_option("--gross-errors", gen.gross_errors, "Planted expert-score errors");
  gen_cmd->add_flag("--no-images", gen.no_images, "Skip rendering (scores and manifest only)");

  PreprocessArgs pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Write preprocessed copies of a cohort's images");
  pre_cmd->add_option("--manifest", pre.manifest, "Input manifest.csv")->required();
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  pre_cmd->add_option("--size", pre.size, "Target side S (default: backbone.input_size)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train once on a single stratified split");
  train_cmd->add_option("--manifest", tr.manifest, "Cohort manifest.csv")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--seed", tr.seed, "Split, initialization and shuffling seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Repeated split protocol, or external evaluation of a checkpoint");
  eval_cmd->add_option("--manifest", ev.manifest, "Cohort manifest.csv");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--repeats", ev.repeats, "Number of repeated splits");
  eval_cmd->add_option("--jobs", ev.jobs, "Worker threads for repeats");
  eval_cmd->add_option("--seed-base", ev.seed_base, "Repeat r uses seed seed_base + r");
  eval_cmd->add_option("--threshold", ev.threshold, "Decision threshold on p(MCI)");
  eval_cmd->add_flag("--baselines", ev.baselines, "Run the logistic and single-stream baselines too");
  eval_cmd->add_flag("--stub", ev.stub, "Scoring-only model with the stub image scorer");
  eval_cmd->add_option("--external-manifest", ev.external_manifest, "Evaluate --checkpoint on this cohort");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint for external evaluation");

  QcArgs qa;
  auto* qc_cmd = app.add_subcommand("qc", "Expert vs AI score agreement, flags and corrections");
  qc_cmd->add_option("--scores", qa.scores, "image_id,condition,expert_score,ai_score")->required();
  qc_cmd->add_option("--corrections", qa.corrections, "image_id,corrected_score,note");
  qc_cmd->add_option("--out", qa.out, "Output directory")->required();
  qc_cmd->add_option("--threshold", qa.threshold, "Flag when |expert - ai| exceeds this");
  qc_cmd->add_option("--r2", qa.r2, "pearson or determination");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(g, gen);
    if (*pre_cmd) return cmd_preprocess(g, pre);
    if (*train_cmd) return cmd_train(g, tr);
    if (*eval_cmd) return cmd_eval(g, ev);
    if (*qc_cmd) return cmd_qc(g, qa);
  } catch (const std::exception& e) {
    const int code = classify(e);
    std::cerr << "mstream: " << kind_name(code) << ": " << e.what() << '\n';
    return code;
  }
  return kOther;
}

#include "mstream/pipeline.hpp"

#include <algorithm>

#include "mstream/image.hpp"

namespace mstream {

std::string model_row_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::fused:
      return kRowMulti;
    case FusionMode::spatial_only:
      return kRowImages;
    case FusionMode::scoring_only:
      return kRowScoring;
  }
  return "?";
}

Dataset load_dataset(const CohortManifest& manifest, const ModelConfig& model) {
  model.validate();
  const bool need_images = model.mode != FusionMode::scoring_only || model.scorer != "file";
  const auto scorer = make_scorer(model.scorer, model.dtype);
  Dataset d;
  d.manifest = manifest;
  d.samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    Sample s;
    s.subject_id = r.subject_id;
    s.label = r.label;
    if (need_images) {
      for (Condition c : kConditions) {
        s.images[static_cast<std::size_t>(c)] =
            preprocess_image(read_png(manifest.image_path(r, c)), model.backbone.input_size, model.dtype);
      }
    }
    s.scoring = {score_images(*scorer, r, s.images), r.demographics};
    d.labels.push_back(r.label == Label::mci ? 1 : 0);
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

std::vector<ScoringInput> inputs_for(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<ScoringInput> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data.samples[i].scoring);
  return out;
}

RepeatOutcome outcome_for(const Dataset& data, const std::vector<std::size_t>& idx, std::vector<double> scores) {
  RepeatOutcome o;
  o.scores = std::move(scores);
  for (auto i : idx) {
    o.ids.push_back(data.samples[i].subject_id);
    o.labels.push_back(data.labels[i]);
  }
  return o;
}

}  // namespace

RepeatArtifacts run_model_repeat(const Dataset& data, const ModelConfig& model, const TrainConfig& train,
                                 const Split& split, std::uint64_t seed) {
  auto m = MultiStreamModel::init(model, derive_seed(seed, 1));
  m.scoring.normalizer.fit(inputs_for(data, split.train), SplitRole::train);
  TrainConfig cfg = train;
  cfg.seed = derive_seed(seed, 2);
  RepeatArtifacts out;
  out.history = train_model(m, data.samples, split.train, split.validation, cfg);
  out.outcome = outcome_for(data, split.test, predict_batch(m, data.samples, split.test).final);
  out.checkpoint = save_checkpoint(m);
  return out;
}

RepeatOutcome evaluate_model(MultiStreamModel& model, const Dataset& data) {
  std::vector<std::size_t> all(data.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return outcome_for(data, all, predict_batch(model, data.samples, all).final);
}

std::string to_string(ScoreSource source) {
  switch (source) {
    case ScoreSource::mmse:
      return "mmse";
    case ScoreSource::expert:
      return "expert";
    case ScoreSource::ai:
      return "ai";
  }
  return "?";
}

FeatureMatrix baseline_features(const CohortManifest& manifest, const std::vector<std::size_t>& idx, ScoreSource source) {
  FeatureMatrix x;
  if (source == ScoreSource::mmse) {
    x.names = {"mmse"};
  } else {
    const std::string p = source == ScoreSource::expert ? "expert_" : "ai_";
    x.names = {p + "copy", p + "imm", p + "del"};
  }
  x.names.insert(x.names.end(), {"age", "sex_female", "education"});
  x.cols = x.names.size();
  x.continuous.assign(x.cols, true);
  x.continuous[x.cols - 2] = false;
  std::vector<double> row;
  for (auto i : idx) {
    const auto& r = manifest.records.at(i);
    row.clear();
    if (source == ScoreSource::mmse) {
      if (!r.mmse) throw DataError("subject " + r.subject_id + " has no MMSE score");
      row.push_back(*r.mmse);
    } else {
      const auto& scores = source == ScoreSource::expert ? r.expert_scores : r.ai_scores;
      if (!scores) throw DataError("subject " + r.subject_id + " has no " + to_string(source) + " scores");
      for (Condition c : kConditions) row.push_back((*scores)[c]);
    }
    row.push_back(r.demographics.age);
    row.push_back(r.demographics.sex == Sex::female ? 1.0 : 0.0);
    row.push_back(r.demographics.education);
    x.add_row(row);
  }
  return x;
}

LogisticRepeat run_logistic_repeat(const CohortManifest& manifest, ScoreSource source, const Split& split,
                                   const LogisticOptions& options) {
  std::vector<int> y;
  for (auto i : split.train) y.push_back(manifest.records[i].label == Label::mci ? 1 : 0);
  LogisticRepeat out;
  out.model = logistic_fit(baseline_features(manifest, split.train, source), y, options);
  const auto test = baseline_features(manifest, split.test, source);
  for (std::size_t k = 0; k < split.test.size(); ++k) {
    const auto& r = manifest.records[split.test[k]];
    out.outcome.ids.push_back(r.subject_id);
    out.outcome.labels.push_back(r.label == Label::mci ? 1 : 0);
    out.outcome.scores.push_back(out.model.predict(test.row(k)));
  }
  return out;
}

std::string ProtocolResult::median_checkpoint() const {
  if (checkpoints.empty()) throw StateError("no checkpoints recorded for " + report.name);
  return checkpoints.at(static_cast<std::size_t>(report.median_repeat));
}

ProtocolResult evaluate_deep(const Dataset& data, const ModelConfig& model, const TrainConfig& train,
                             const EvalOptions& options, const std::string& name) {
  ProtocolResult out;
  out.histories.resize(static_cast<std::size_t>(options.repeats));
  out.checkpoints.resize(static_cast<std::size_t>(options.repeats));
  out.report = repeated_eval(name, options, [&](int r, std::uint64_t seed) {
    const auto split = split_dataset(data.labels, seed, {}, options.stratify);
    auto art = run_model_repeat(data, model, train, split, seed);
    out.histories[static_cast<std::size_t>(r)] = std::move(art.history);
    out.checkpoints[static_cast<std::size_t>(r)] = std::move(art.checkpoint);
    return art.outcome;
  });
  return out;
}

ProtocolResult evaluate_logistic(const CohortManifest& manifest, ScoreSource source, const LogisticOptions& logistic,
                                 const EvalOptions& options, const std::string& name) {
  std::vector<int> labels;
  for (const auto& r : manifest.records) labels.push_back(r.label == Label::mci ? 1 : 0);
  // Surface a missing field as a plain DataError before any repeat runs.
  std::vector<std::size_t> all(manifest.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  baseline_features(manifest, all, source);

  ProtocolResult out;
  out.coefficient_csvs.resize(static_cast<std::size_t>(options.repeats));
  out.report = repeated_eval(name, options, [&](int r, std::uint64_t seed) {
    auto res = run_logistic_repeat(manifest, source, split_dataset(labels, seed, {}, options.stratify), logistic);
    out.coefficient_csvs[static_cast<std::size_t>(r)] = res.model.coefficients_csv();
    return res.outcome;
  });
  return out;
}

SuiteResult run_baseline_suite(const CohortManifest& manifest, const ModelConfig& model, const TrainConfig& train,
                               const LogisticOptions& logistic, const EvalOptions& options) {
  SuiteResult out;
  const std::pair<const char*, ScoreSource> logistic_rows[] = {
      {kRowMmse, ScoreSource::mmse}, {kRowExpert, ScoreSource::expert}, {kRowAi, ScoreSource::ai}};
  for (const auto& [name, source] : logistic_rows) {
    try {
      out.rows.push_back(evaluate_logistic(manifest, source, logistic, options, name));
    } catch (const DataError& e) {
      out.skipped.push_back({name, e.what()});
    }
  }
  ModelConfig fused = model;
  fused.mode = FusionMode::fused;
  ModelConfig spatial = model;
  spatial.mode = FusionMode::spatial_only;
  ModelConfig scoring = model;
  scoring.mode = FusionMode::scoring_only;
  std::optional<Dataset> data;
  try {
    data = load_dataset(manifest, fused);
  } catch (const DataError& e) {
    out.skipped.push_back({kRowImages, e.what()});
    out.skipped.push_back({kRowScoring, e.what()});
    out.skipped.push_back({kRowMulti, e.what()});
    return out;
  }
  out.rows.push_back(evaluate_deep(*data, spatial, train, options, kRowImages));
  out.rows.push_back(evaluate_deep(*data, scoring, train, options, kRowScoring));
  out.rows.push_back(evaluate_deep(*data, fused, train, options, kRowMulti));
  return out;
}

}  // namespace mstream

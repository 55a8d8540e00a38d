#include "mstream/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "mstream/ops.hpp"

namespace mstream {

TrainConfig TrainConfig::from_config(const Config& cfg) {
  TrainConfig t;
  t.initial_lr = cfg.get_double("train", "initial_lr", t.initial_lr);
  t.lr_decay_factor = cfg.get_double("train", "lr_decay_factor", t.lr_decay_factor);
  t.lr_decay_every = cfg.get_int("train", "lr_decay_every", t.lr_decay_every);
  t.scoring_lr_scale = cfg.get_double("train", "scoring_lr_scale", t.scoring_lr_scale);
  t.patience = cfg.get_int("train", "patience", t.patience);
  t.max_epochs = cfg.get_int("train", "max_epochs", t.max_epochs);
  t.batch_size = static_cast<std::size_t>(cfg.get_int("train", "batch_size", static_cast<int>(t.batch_size)));
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train", "seed", static_cast<int>(t.seed)));
  t.validate();
  return t;
}

void TrainConfig::write(Config& cfg) const {
  cfg.set("train", "initial_lr", format_double(initial_lr));
  cfg.set("train", "lr_decay_factor", format_double(lr_decay_factor));
  cfg.set("train", "lr_decay_every", std::to_string(lr_decay_every));
  cfg.set("train", "scoring_lr_scale", format_double(scoring_lr_scale));
  cfg.set("train", "patience", std::to_string(patience));
  cfg.set("train", "max_epochs", std::to_string(max_epochs));
  cfg.set("train", "batch_size", std::to_string(batch_size));
  cfg.set("train", "seed", std::to_string(seed));
}

void TrainConfig::validate() const {
  if (!(initial_lr > 0) || !std::isfinite(initial_lr)) throw ConfigError("train.initial_lr must be positive");
  if (!(lr_decay_factor > 0) || lr_decay_factor > 1) throw ConfigError("train.lr_decay_factor must lie in (0, 1]");
  if (!(scoring_lr_scale > 0) || !std::isfinite(scoring_lr_scale)) {
    throw ConfigError("train.scoring_lr_scale must be positive");
  }
  if (lr_decay_every <= 0 || patience <= 0 || max_epochs <= 0 || batch_size == 0) {
    throw ConfigError("train: lr_decay_every, patience, max_epochs and batch_size must be positive");
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ContractError("lr_at: negative epoch");
  return cfg.initial_lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

Tensor bce_loss(const Tensor& p, const Tensor& y) {
  if (p.numel() != y.numel()) throw DimensionError("bce_loss: prediction and label counts differ");
  for (double v : y.values()) {
    if (v != 0.0 && v != 1.0) throw ContractError("bce_loss: labels must be 0 or 1");
  }
  Tensor pc = clamp(reshape(p, {p.numel()}), 1e-7, 1.0 - 1e-7);
  Tensor yy = reshape(y, {y.numel()});
  Tensor ll = add(mul(yy, log(pc)), mul(add_scalar(neg(yy), 1.0), log(add_scalar(neg(pc), 1.0))));
  return neg(mean(ll));
}

void adam_step(ParamList& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               const AdamOptions& o) {
  adam_step(params, grads, state, lr, {}, o);
}

void adam_step(ParamList& params, const std::vector<Tensor>& grads, AdamState& state, double base_lr,
               const std::vector<double>& lr_scale, const AdamOptions& o) {
  if (grads.size() != params.size()) throw ContractError("adam_step: one gradient slot per parameter expected");
  if (!lr_scale.empty() && lr_scale.size() != params.size()) {
    throw ContractError("adam_step: one lr scale per parameter expected");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state belongs to another model");
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.role != ParamRole::trainable || !grads[i].defined()) continue;
    if (grads[i].shape() != p.tensor.shape()) {
      throw ContractError("adam_step: gradient shape " + shape_to_string(grads[i].shape()) + " does not match " +
                          p.name + " " + shape_to_string(p.tensor.shape()));
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.empty()) {
      m.assign(p.tensor.numel(), 0.0);
      v.assign(p.tensor.numel(), 0.0);
    }
    const auto g = grads[i].values();
    const double lr = lr_scale.empty() ? base_lr : base_lr * lr_scale[i];
    visit_dtype(p.tensor.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto w = p.tensor.mutable_data<T>();
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
        v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
        const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + o.eps);
        w[k] = static_cast<T>(w[k] - update);
      }
    });
  }
}

std::vector<Tensor> collect_grads(const ParamList& params) {
  std::vector<Tensor> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].role == ParamRole::trainable && params[i].tensor.has_grad()) out[i] = params[i].tensor.grad();
  }
  return out;
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
        << format_double(e.lr) << '\n';
  }
  return out.str();
}

TrainHistory run_training(const TrainConfig& cfg, const TrainingHooks& hooks) {
  cfg.validate();
  TrainHistory h;
  double best = 0;
  for (int epoch = 0;; ++epoch) {
    if (epoch == cfg.max_epochs) {
      h.stopped_epoch = epoch;
      break;
    }
    const double lr = lr_at(epoch, cfg);
    const double train_loss = hooks.train_epoch(epoch, lr);
    const double val_loss = hooks.validation_loss(epoch);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " (train " + format_double(train_loss) +
                         ", validation " + format_double(val_loss) + ")");
    }
    h.epochs.push_back({epoch, train_loss, val_loss, lr});
    if (h.best_epoch < 0 || val_loss < best) {
      best = val_loss;
      h.best_epoch = epoch;
      if (hooks.save_best) hooks.save_best(epoch);
    }
    if (epoch - h.best_epoch >= cfg.patience) {
      h.stopped_epoch = epoch;
      break;
    }
  }
  if (hooks.restore_best && h.best_epoch >= 0) hooks.restore_best(h.best_epoch);
  return h;
}

Tensor stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx, DType dtype) {
  if (idx.empty()) throw DataError("empty batch");
  const Tensor& first = samples.at(idx[0]).images[0];
  if (!first.defined()) throw DataError("subject " + samples[idx[0]].subject_id + ": missing copy image");
  const std::size_t h = first.size(1), w = first.size(2), plane = h * w;
  Tensor out = Tensor::zeros({3 * idx.size(), 1, h, w}, dtype);
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Sample& s = samples.at(idx[i]);
      for (std::size_t c = 0; c < 3; ++c) {
        const Tensor& img = s.images[c];
        if (!img.defined()) throw DataError("subject " + s.subject_id + ": missing " + to_string(kConditions[c]) + " image");
        if (img.numel() != plane) throw DimensionError("subject " + s.subject_id + ": image size differs within the batch");
        if (img.dtype() == dtype) {
          const auto src = img.data<T>();
          std::copy(src.begin(), src.end(), dst.begin() + (3 * i + c) * plane);
        } else {
          const auto src = img.values();
          for (std::size_t k = 0; k < plane; ++k) dst[(3 * i + c) * plane + k] = static_cast<T>(src[k]);
        }
      }
    }
  });
  return out;
}

Tensor label_tensor(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx, DType dtype) {
  std::vector<double> y;
  y.reserve(idx.size());
  for (auto i : idx) y.push_back(samples.at(i).label == Label::mci ? 1.0 : 0.0);
  return Tensor::from({idx.size()}, y, dtype);
}

namespace {

Tensor features_for(const MultiStreamModel& model, const std::vector<Sample>& samples,
                    const std::vector<std::size_t>& idx) {
  if (model.config.mode == FusionMode::spatial_only) return {};
  std::vector<ScoringInput> in;
  in.reserve(idx.size());
  for (auto i : idx) in.push_back(samples.at(i).scoring);
  return model.scoring.normalizer.transform(in);
}

Tensor images_for(const MultiStreamModel& model, const std::vector<Sample>& samples,
                  const std::vector<std::size_t>& idx) {
  if (model.config.mode == FusionMode::scoring_only) return {};
  return stack_images(samples, idx, model.config.dtype);
}

std::vector<double> mci_column(const Tensor& p) {
  std::vector<double> out(p.size(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p.at(2 * i + 1);
  return out;
}

}  // namespace

BatchPredictions predict_batch(MultiStreamModel& model, const std::vector<Sample>& samples,
                               const std::vector<std::size_t>& idx, std::size_t chunk) {
  NoGradGuard guard;
  BatchPredictions out;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    std::vector<std::size_t> part(idx.begin() + start, idx.begin() + std::min(idx.size(), start + chunk));
    auto o = model.forward(images_for(model, samples, part), features_for(model, samples, part), Mode::eval);
    auto append = [](std::vector<double>& dst, const Tensor& t) {
      if (!t.defined()) return;
      auto v = mci_column(t);
      dst.insert(dst.end(), v.begin(), v.end());
    };
    append(out.spatial, o.spatial);
    append(out.scoring, o.scoring);
    append(out.final, o.final);
  }
  return out;
}

double evaluation_loss(MultiStreamModel& model, const std::vector<Sample>& samples,
                       const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw DataError("empty evaluation split");
  const auto p = predict_batch(model, samples, idx).final;
  NoGradGuard guard;
  Tensor loss = bce_loss(Tensor::from({p.size()}, p), label_tensor(samples, idx, DType::f64));
  return loss.item();
}

TrainHistory train_model(MultiStreamModel& model, const std::vector<Sample>& samples,
                         const std::vector<std::size_t>& train_idx, const std::vector<std::size_t>& val_idx,
                         const TrainConfig& cfg) {
  if (train_idx.empty()) throw DataError("training split is empty");
  if (val_idx.empty()) throw DataError("validation split is empty");
  ParamList params = model.parameters();
  std::vector<double> lr_scale(params.size(), 1.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name.rfind("scoring.", 0) == 0) lr_scale[i] = cfg.scoring_lr_scale;
  }
  AdamState adam;
  Rng shuffle_rng(cfg.seed ^ 0x5eed5eedULL);
  std::vector<Tensor> best;

  TrainingHooks hooks;
  hooks.train_epoch = [&](int epoch, double lr) {
    std::vector<std::size_t> order = train_idx;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      std::vector<std::size_t> part(order.begin() + start, order.begin() + std::min(order.size(), start + cfg.batch_size));
      auto out = model.forward(images_for(model, samples, part), features_for(model, samples, part), Mode::train);
      Tensor loss = bce_loss(slice(out.final, 1, 1, 1), label_tensor(samples, part, model.config.dtype));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch));
      }
      backward(loss);
      adam_step(params, collect_grads(params), adam, lr, lr_scale);
      zero_grads(params);
      total += value * static_cast<double>(part.size());
    }
    return total / static_cast<double>(order.size());
  };
  hooks.validation_loss = [&](int) { return evaluation_loss(model, samples, val_idx); };
  hooks.save_best = [&](int) {
    best.clear();
    for (const auto& p : params) best.push_back(p.tensor.detach());
  };
  hooks.restore_best = [&](int) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      visit_dtype(params[i].tensor.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = best[i].data<T>();
        auto dst = params[i].tensor.mutable_data<T>();
        std::copy(src.begin(), src.end(), dst.begin());
      });
    }
  };
  return run_training(cfg, hooks);
}

}  // namespace mstream

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mstream/fusion.hpp"

namespace mstream {

struct TrainConfig {
  double initial_lr = 1e-3;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 5;
  int patience = 30;
  int max_epochs = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  // Multiplies the step of every "scoring." tensor. The scoring head is a
  // single dense layer that needs a much longer step budget than the
  // spatial stream gets under the decay schedule.
  double scoring_lr_scale = 1.0;

  static TrainConfig from_config(const Config& cfg);
  void write(Config& cfg) const;
  void validate() const;
};

// initial_lr * factor^floor(epoch / every).
double lr_at(int epoch, const TrainConfig& cfg);

// Mean of -(y log p + (1 - y) log(1 - p)) with p clipped to [1e-7, 1 - 1e-7].
// p and y have the same number of elements; y must be 0 or 1.
Tensor bce_loss(const Tensor& p, const Tensor& y);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update of every trainable entry of params using
// grads[i] (an undefined gradient skips the tensor). Frozen tensors and
// buffers are never written.
void adam_step(ParamList& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               const AdamOptions& options = {});
// Same with a per-tensor multiplier on lr (empty: all 1).
void adam_step(ParamList& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               const std::vector<double>& lr_scale, const AdamOptions& options = {});

// Gradients currently accumulated on the trainable parameters.
std::vector<Tensor> collect_grads(const ParamList& params);
void zero_grads(const ParamList& params);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  int stopped_epoch = -1;

  // epoch,train_loss,val_loss,lr
  std::string to_csv() const;
};

// Callbacks driving the epoch loop, so the stopping logic can be exercised
// with scripted losses.
struct TrainingHooks {
  std::function<double(int epoch, double lr)> train_epoch;  // mean training loss
  std::function<double(int epoch)> validation_loss;
  std::function<void(int epoch)> save_best;
  std::function<void(int epoch)> restore_best;
};

// Epochs are numbered from 0. After each epoch the validation loss is
// compared with the best so far (strictly lower wins). Training stops once
// epoch - best_epoch >= patience, or before starting epoch max_epochs, and
// the best snapshot is restored.
TrainHistory run_training(const TrainConfig& cfg, const TrainingHooks& hooks);

// One subject ready for the model.
struct Sample {
  std::string subject_id;
  std::array<Tensor, 3> images;  // 1 x S x S in the model dtype; may be undefined in scoring-only mode
  ScoringInput scoring;
  Label label = Label::cn;
};

// Batch tensors for a list of sample indices.
Tensor stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx, DType dtype);
Tensor label_tensor(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx, DType dtype);

struct BatchPredictions {
  std::vector<double> spatial;  // p(MCI) per stream; empty for an inactive stream
  std::vector<double> scoring;
  std::vector<double> final;
};

// Eval-mode forward in chunks, without recording gradients.
BatchPredictions predict_batch(MultiStreamModel& model, const std::vector<Sample>& samples,
                               const std::vector<std::size_t>& idx, std::size_t chunk = 64);

// Mean BCE of the final output over idx in eval mode.
double evaluation_loss(MultiStreamModel& model, const std::vector<Sample>& samples, const std::vector<std::size_t>& idx);

// Mini-batch training with Adam, the step schedule and early stopping on the
// validation loss. The normalizer must already be fitted. Restores the
// weights of the best epoch.
TrainHistory train_model(MultiStreamModel& model, const std::vector<Sample>& samples,
                         const std::vector<std::size_t>& train_idx, const std::vector<std::size_t>& val_idx,
                         const TrainConfig& cfg);

}  // namespace mstream

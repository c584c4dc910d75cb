#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitforge/classifier.hpp"
#include "vitforge/dataset.hpp"
#include "vitforge/metrics.hpp"

namespace vitforge {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 256;
  /// Samples per forward/backward pass; gradients of the micro-batches of
  /// one batch are accumulated before the optimizer step. 0 means the
  /// whole batch at once.
  std::size_t micro_batch_size = 0;
  std::size_t eval_batch_size = 64;
  std::size_t max_epochs = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Early stopping on validation loss.
  std::size_t early_stop_patience = 10;
  double early_stop_min_delta = 1e-6;
  bool restore_best = true;
  /// Stop once validation accuracy reaches this value; 0 disables.
  double target_val_accuracy = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip_norm = 0.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamHyper {
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay followed by one bias-corrected Adam update at
/// step `t` (1-based): p <- p - lr*wd*p; m, v moments; p <- p - lr*mhat/(sqrt(vhat)+eps).
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 std::uint64_t t, const AdamHyper& hyper);

struct OptimizerState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t step = 0;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  NonFiniteGradientError(const std::string& parameter, std::size_t index);
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

/// Advances `state.step` and updates every parameter from its gradient
/// buffer (a missing buffer counts as zero). Checks all gradients before
/// touching any parameter.
void adam_step(std::span<const NamedTensor<float>> params, OptimizerState& state, const AdamHyper& hyper);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double val_precision_macro = 0.0;
  double val_recall_macro = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct EvalResult {
  double loss = 0.0;
  ConfusionMatrix confusion;
};

/// Eval-mode pass over `data` in slices of `batch_size`.
EvalResult evaluate(Classifier& model, const Dataset& data, std::size_t batch_size);

/// Softmax probabilities for every sample, row-major [n, K].
std::vector<double> predict_proba(Classifier& model, const Dataset& data, std::size_t batch_size);

enum class StopReason { max_epochs, early_stopping, target_reached };
std::string to_string(StopReason reason);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::size_t step, const std::string& last_checkpoint);
  std::size_t epoch() const { return epoch_; }
  const std::string& last_checkpoint() const { return last_checkpoint_; }

 private:
  std::size_t epoch_;
  std::string last_checkpoint_;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  std::size_t epochs_done = 0;
  OptimizerState optimizer;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 before the first epoch
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_without_improvement = 0;
  std::vector<std::vector<float>> best_params;
  bool finished = false;
  StopReason stop_reason = StopReason::max_epochs;
};

struct TrainHooks {
  /// Replaces the validation pass (scripted metrics in tests).
  std::function<EvalResult(std::size_t epoch)> validate;
  /// Called after each epoch's bookkeeping, e.g. to write checkpoints.
  std::function<void(const TrainState&)> on_epoch_end;
  /// Reported in DivergenceError.
  std::function<std::string()> last_checkpoint;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  StopReason stop_reason = StopReason::max_epochs;
};

/// Runs epochs until max_epochs, early stopping, or the accuracy target.
/// With restore_best the model ends holding the parameters of the epoch
/// with the lowest validation loss. Shuffling, augmentation, and dropout
/// draw from streams keyed by (seed, epoch, step), so a run resumed from
/// `state` continues bit-exactly.
TrainResult train(Classifier& model, const Dataset& train_data, const Dataset& val_data, const TrainConfig& cfg,
                  const std::optional<AugmentSpec>& augmentation, const TrainHooks& hooks = {},
                  TrainState* state = nullptr);

/// Copies of every parameter's values, in parameters() order.
std::vector<std::vector<float>> snapshot(Classifier& model);
void restore(Classifier& model, const std::vector<std::vector<float>>& values);

}  // namespace vitforge

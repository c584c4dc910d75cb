#include "vitforge/train.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "vitforge/ops.hpp"
#include "vitforge/parallel.hpp"

namespace vitforge {

namespace {

void require(bool ok, const char* field, const std::string& why) {
  if (!ok) throw std::invalid_argument(fmt::format("train.{} {}", field, why));
}

std::span<const int> labels_of(const Batch& batch, std::size_t start, std::size_t length) {
  return std::span<const int>(batch.labels).subspan(start, length);
}

// Row-wise log-sum-exp in double; returns -log p(label) per row.
double row_nll(std::span<const float> row, int label) {
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (float z : row) total += std::exp(static_cast<double>(z) - mx);
  return std::log(total) + mx - static_cast<double>(row[static_cast<std::size_t>(label)]);
}

Tensor<float> eval_logits(Classifier& model, const Dataset& data, std::size_t start, std::size_t length) {
  std::vector<const Image*> images;
  images.reserve(length);
  for (std::size_t i = start; i < start + length; ++i) images.push_back(&data.samples[i].pixels);
  Rng unused(0);
  return model.forward(stack_images(images), Mode::eval, unused);
}

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate", "must be positive");
  require(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay", "must be non-negative");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(eval_batch_size >= 1, "eval_batch_size", "must be at least 1");
  require(max_epochs >= 1, "max_epochs", "must be at least 1");
  require(adam_beta1 > 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in (0, 1)");
  require(adam_beta2 > 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in (0, 1)");
  require(adam_eps > 0.0, "adam_eps", "must be positive");
  require(early_stop_patience >= 1, "early_stop_patience", "must be at least 1");
  require(early_stop_min_delta >= 0.0, "early_stop_min_delta", "must be non-negative");
  require(target_val_accuracy >= 0.0 && target_val_accuracy <= 1.0, "target_val_accuracy", "must lie in [0, 1]");
  require(grad_clip_norm >= 0.0, "grad_clip_norm", "must be non-negative");
}

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 std::uint64_t t, const AdamHyper& hyper) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw std::invalid_argument(fmt::format("adam_update: parameter of {} elements with gradient {}, moments {}/{}",
                                            param.size(), grad.size(), m.size(), v.size()));
  }
  if (t == 0) throw std::invalid_argument("adam_update: step counter starts at 1");
  const auto td = static_cast<double>(t);
  const auto decay = static_cast<float>(1.0 - hyper.learning_rate * hyper.weight_decay);
  const auto b1 = static_cast<float>(hyper.beta1);
  const auto b2 = static_cast<float>(hyper.beta2);
  const auto c1 = static_cast<float>(1.0 - hyper.beta1);
  const auto c2 = static_cast<float>(1.0 - hyper.beta2);
  // lr * mhat / (sqrt(vhat) + eps) with both corrections folded in.
  const auto step = static_cast<float>(hyper.learning_rate / (1.0 - std::pow(hyper.beta1, td)));
  const auto vcorr = static_cast<float>(1.0 / (1.0 - std::pow(hyper.beta2, td)));
  const auto eps = static_cast<float>(hyper.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    m[i] = b1 * m[i] + c1 * g;
    v[i] = b2 * v[i] + c2 * g * g;
    param[i] = param[i] * decay - step * m[i] / (std::sqrt(v[i] * vcorr) + eps);
  }
}

NonFiniteGradientError::NonFiniteGradientError(const std::string& parameter, std::size_t index)
    : std::runtime_error(fmt::format("non-finite gradient in parameter '{}' at element {}", parameter, index)),
      parameter_(parameter) {}

void adam_step(std::span<const NamedTensor<float>> params, OptimizerState& state, const AdamHyper& hyper) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), 0.0f);
      state.v.emplace_back(p.tensor.size(), 0.0f);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument(
        fmt::format("optimizer state holds {} moments for {} parameters", state.m.size(), params.size()));
  }
  for (const auto& p : params) {
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i])) throw NonFiniteGradientError(p.name, i);
  }
  ++state.step;
  std::vector<float> zeros;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<float> t = params[k].tensor;
    std::span<const float> g = t.grad();
    if (g.empty()) {
      zeros.assign(t.size(), 0.0f);
      g = zeros;
    }
    adam_update(t.mutable_data(), g, state.m[k], state.v[k], state.step, hyper);
  }
}

EvalResult evaluate(Classifier& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluation batch size must be at least 1");
  const std::size_t k = model.num_classes();
  EvalResult result{0.0, ConfusionMatrix(k, data.classes.size() == k ? data.classes.names()
                                                                    : std::vector<std::string>{})};
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, data.size() - start);
    const auto logits = eval_logits(model, data, start, len);
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < len; ++i) {
      const int label = data.samples[start + i].label;
      total += row_nll(logits.data().subspan(i * k, k), label);
      result.confusion.add(label, pred[i]);
    }
  }
  result.loss = total / static_cast<double>(data.size());
  return result;
}

std::vector<double> predict_proba(Classifier& model, const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("prediction batch size must be at least 1");
  const std::size_t k = model.num_classes();
  std::vector<double> probs;
  probs.reserve(data.size() * k);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, data.size() - start);
    const auto logits = eval_logits(model, data, start, len);
    for (std::size_t i = 0; i < len; ++i) {
      const auto row = logits.data().subspan(i * k, k);
      const double mx = *std::max_element(row.begin(), row.end());
      double total = 0.0;
      for (float z : row) total += std::exp(static_cast<double>(z) - mx);
      for (float z : row) probs.push_back(std::exp(static_cast<double>(z) - mx) / total);
    }
  }
  return probs;
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::max_epochs:
      return "max_epochs";
    case StopReason::early_stopping:
      return "early_stopping";
    case StopReason::target_reached:
      return "target_reached";
  }
  return "unknown";
}

DivergenceError::DivergenceError(std::size_t epoch, std::size_t step, const std::string& last_checkpoint)
    : std::runtime_error(fmt::format("non-finite loss at epoch {} step {}; last good checkpoint: {}", epoch, step,
                                     last_checkpoint.empty() ? "none" : last_checkpoint)),
      epoch_(epoch),
      last_checkpoint_(last_checkpoint) {}

std::vector<std::vector<float>> snapshot(Classifier& model) {
  std::vector<std::vector<float>> values;
  for (const auto& p : model.parameters()) values.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return values;
}

void restore(Classifier& model, const std::vector<std::vector<float>>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) {
    throw std::invalid_argument(fmt::format("restoring {} tensors into {} parameters", values.size(), params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].tensor.mutable_data();
    if (dst.size() != values[k].size()) {
      throw std::invalid_argument(fmt::format("restoring {} values into '{}' of {}", values[k].size(), params[k].name,
                                              dst.size()));
    }
    std::copy(values[k].begin(), values[k].end(), dst.begin());
  }
}

TrainResult train(Classifier& model, const Dataset& train_data, const Dataset& val_data, const TrainConfig& cfg,
                  const std::optional<AugmentSpec>& augmentation, const TrainHooks& hooks, TrainState* state) {
  cfg.validate();
  retain_freed_memory();
  if (train_data.size() == 0) throw DataError("training set is empty");
  if (val_data.size() == 0 && !hooks.validate) throw DataError("validation set is empty");
  if (val_data.size() > 0 && !(train_data.classes == val_data.classes)) {
    throw DataError("training and validation class maps differ");
  }
  if (!train_data.classes.empty() && train_data.classes.size() != model.num_classes()) {
    throw DataError(fmt::format("model predicts {} classes but the data has {}", model.num_classes(),
                                train_data.classes.size()));
  }

  TrainState local;
  TrainState& st = state ? *state : local;
  auto params = model.parameters();
  const AdamHyper hyper{cfg.learning_rate, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  const std::size_t micro = cfg.micro_batch_size == 0 ? cfg.batch_size : std::min(cfg.micro_batch_size, cfg.batch_size);
  const auto last_checkpoint = [&] { return hooks.last_checkpoint ? hooks.last_checkpoint() : std::string(); };

  BatchStream stream(train_data, cfg.batch_size, cfg.seed, augmentation);
  for (std::size_t epoch = st.epochs_done + 1; !st.finished && epoch <= cfg.max_epochs; ++epoch) {
    stream.start_epoch(epoch);
    Batch batch;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t step = 0;
    while (stream.next(batch)) {
      for (const auto& p : params) p.tensor.zero_grad();
      const std::size_t b = batch.labels.size();
      for (std::size_t start = 0, chunk = 0; start < b; start += micro, ++chunk) {
        const std::size_t len = std::min(micro, b - start);
        const Tensor<float> images = len == b ? batch.images : slice(batch.images, 0, start, len);
        const auto labels = labels_of(batch, start, len);
        Rng dropout_rng = Rng::derive(cfg.seed, {0xd60, epoch, step, chunk});
        GradTape<float> tape;
        TapeScope<float> scope(tape);
        const auto logits = model.forward(images, Mode::train, dropout_rng);
        const auto loss = softmax_cross_entropy(logits, labels);
        const double value = loss.item();
        if (!std::isfinite(value)) throw DivergenceError(epoch, step, last_checkpoint());
        const float weight = static_cast<float>(len) / static_cast<float>(b);
        tape.backward(loss, std::span<const float>(&weight, 1));
        loss_sum += value * static_cast<double>(len);
        const auto pred = argmax_rows(logits);
        for (std::size_t i = 0; i < len; ++i) correct += pred[i] == labels[i];
      }
      if (cfg.grad_clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& p : params)
          for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip_norm) {
          const auto factor = static_cast<float>(cfg.grad_clip_norm / norm);
          for (const auto& p : params)
            for (float& g : p.tensor.grad_buffer()) g *= factor;
        }
      }
      adam_step(params, st.optimizer, hyper);
      ++step;
    }

    EvalResult val = hooks.validate ? hooks.validate(epoch) : evaluate(model, val_data, cfg.eval_batch_size);
    if (!std::isfinite(val.loss)) throw DivergenceError(epoch, step, last_checkpoint());
    const Report summary = make_report(val.confusion, "");
    const auto n = static_cast<double>(train_data.size());
    st.history.push_back(EpochRecord{epoch, loss_sum / n, static_cast<double>(correct) / n, val.loss,
                                     summary.accuracy, summary.macro_precision, summary.macro_recall});

    if (val.loss < st.best_val_loss - cfg.early_stop_min_delta) {
      st.best_val_loss = val.loss;
      st.best_epoch = epoch;
      st.epochs_without_improvement = 0;
      if (cfg.restore_best) st.best_params = snapshot(model);
    } else {
      ++st.epochs_without_improvement;
    }
    st.epochs_done = epoch;
    if (cfg.target_val_accuracy > 0.0 && summary.accuracy >= cfg.target_val_accuracy) {
      st.finished = true;
      st.stop_reason = StopReason::target_reached;
    } else if (st.epochs_without_improvement >= cfg.early_stop_patience) {
      st.finished = true;
      st.stop_reason = StopReason::early_stopping;
    } else if (epoch == cfg.max_epochs) {
      st.finished = true;
      st.stop_reason = StopReason::max_epochs;
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(st);
  }

  if (cfg.restore_best && !st.best_params.empty()) restore(model, st.best_params);
  return TrainResult{st.history, st.best_epoch, st.stop_reason};
}

}  // namespace vitforge

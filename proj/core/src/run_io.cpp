#include "vitforge/run_io.hpp"

#include <fmt/format.h>

#include <charconv>
#include <sstream>

namespace vitforge {

namespace {

CheckpointTensor to_entry(std::string name, const Shape& shape, std::span<const float> data) {
  return CheckpointTensor{std::move(name), shape, std::vector<float>(data.begin(), data.end())};
}

std::string state_lines(const TrainState& st, const char* kind) {
  std::string out = fmt::format("state.kind = {}\n", kind);
  out += fmt::format("state.epochs_done = {}\n", st.epochs_done);
  out += fmt::format("state.best_epoch = {}\n", st.best_epoch);
  out += fmt::format("state.best_val_loss = {}\n", st.best_val_loss);
  out += fmt::format("state.epochs_without_improvement = {}\n", st.epochs_without_improvement);
  out += fmt::format("state.finished = {}\n", st.finished ? "true" : "false");
  out += fmt::format("state.stop_reason = {}\n", to_string(st.stop_reason));
  out += fmt::format("state.adam_step = {}\n", st.optimizer.step);
  for (const auto& r : st.history) {
    out += fmt::format("state.history.{:04} = {},{},{},{},{},{},{}\n", r.epoch, r.epoch, r.train_loss, r.train_acc,
                       r.val_loss, r.val_acc, r.val_precision_macro, r.val_recall_macro);
  }
  return out;
}

const std::string& state_value(const std::map<std::string, std::string>& state, const std::string& key) {
  const auto it = state.find(key);
  if (it == state.end()) throw MalformedCheckpointError(fmt::format("checkpoint lacks '{}'", key));
  return it->second;
}

template <typename N>
N parse_state(const std::string& key, const std::string& text) {
  N v{};
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw MalformedCheckpointError(fmt::format("checkpoint value '{}' of '{}' is malformed", text, key));
  }
  return v;
}

template <typename N>
N state_number(const std::map<std::string, std::string>& state, const std::string& key) {
  return parse_state<N>(key, state_value(state, key));
}

}  // namespace

Checkpoint model_checkpoint(const RunConfig& cfg, const ViTClassifier& model, const TrainState* state) {
  Checkpoint ckpt;
  ckpt.config_text = to_text(cfg);
  if (state != nullptr) {
    ckpt.config_text += fmt::format("state.kind = model\nstate.epochs_done = {}\nstate.best_epoch = {}\n",
                                    state->epochs_done, state->best_epoch);
  }
  for (const auto& [name, t] : model.params().named()) ckpt.tensors.push_back(to_entry(name, t.shape(), t.data()));
  return ckpt;
}

Checkpoint resume_checkpoint(const RunConfig& cfg, const ViTClassifier& model, const TrainState& state) {
  Checkpoint ckpt;
  ckpt.config_text = to_text(cfg) + state_lines(state, "resume");
  const auto named = model.params().named();
  for (const auto& [name, t] : named) ckpt.tensors.push_back(to_entry(name, t.shape(), t.data()));
  const bool has_moments = state.optimizer.m.size() == named.size();
  const bool has_best = state.best_params.size() == named.size();
  for (std::size_t k = 0; k < named.size(); ++k) {
    const auto& shape = named[k].tensor.shape();
    if (has_moments) {
      ckpt.tensors.push_back(to_entry("adam.m." + named[k].name, shape, state.optimizer.m[k]));
      ckpt.tensors.push_back(to_entry("adam.v." + named[k].name, shape, state.optimizer.v[k]));
    }
    if (has_best) ckpt.tensors.push_back(to_entry("best." + named[k].name, shape, state.best_params[k]));
  }
  return ckpt;
}

LoadedRun load_run(const Checkpoint& ckpt) {
  LoadedRun run;
  try {
    run.config = parse_config(ckpt.config_text, &run.state);
    run.config.validate();
  } catch (const ConfigError& e) {
    throw MalformedCheckpointError(fmt::format("checkpoint configuration is invalid: {}", e.what()));
  }
  std::vector<ExpectedTensor> expected;
  for (const auto& entry : parameter_layout(run.config.vit)) expected.push_back({entry.name, entry.shape});
  check_tensors(ckpt, expected, true);

  auto params = allocate_params<float>(run.config.vit);
  for (auto& [name, t] : params.named()) {
    const auto& src = ckpt.find(name)->data;
    Tensor<float> handle = t;
    std::copy(src.begin(), src.end(), handle.mutable_data().begin());
  }
  run.model = std::make_unique<ViTClassifier>(run.config.vit, std::move(params));
  return run;
}

TrainState load_train_state(const Checkpoint& ckpt, const LoadedRun& run) {
  if (state_value(run.state, "state.kind") != "resume") {
    throw MalformedCheckpointError("checkpoint holds model weights only; resuming needs a last.vitf checkpoint");
  }
  TrainState st;
  st.epochs_done = state_number<std::size_t>(run.state, "state.epochs_done");
  st.best_epoch = state_number<std::size_t>(run.state, "state.best_epoch");
  st.best_val_loss = state_number<double>(run.state, "state.best_val_loss");
  st.epochs_without_improvement = state_number<std::size_t>(run.state, "state.epochs_without_improvement");
  st.finished = state_value(run.state, "state.finished") == "true";
  const std::string& reason = state_value(run.state, "state.stop_reason");
  for (auto r : {StopReason::max_epochs, StopReason::early_stopping, StopReason::target_reached})
    if (to_string(r) == reason) st.stop_reason = r;
  st.optimizer.step = state_number<std::uint64_t>(run.state, "state.adam_step");

  for (std::size_t e = 1; e <= st.epochs_done; ++e) {
    const std::string key = fmt::format("state.history.{:04}", e);
    std::vector<std::string> cells;
    std::stringstream row(state_value(run.state, key));
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw MalformedCheckpointError(fmt::format("'{}' needs 7 fields", key));
    st.history.push_back(EpochRecord{parse_state<std::size_t>(key, cells[0]), parse_state<double>(key, cells[1]),
                                     parse_state<double>(key, cells[2]), parse_state<double>(key, cells[3]),
                                     parse_state<double>(key, cells[4]), parse_state<double>(key, cells[5]),
                                     parse_state<double>(key, cells[6])});
  }

  const auto layout = parameter_layout(run.config.vit);
  const bool has_moments = st.optimizer.step > 0;
  const bool has_best = ckpt.find("best." + layout.front().name) != nullptr;
  std::vector<ExpectedTensor> expected;
  for (const auto& entry : layout) {
    if (has_moments) {
      expected.push_back({"adam.m." + entry.name, entry.shape});
      expected.push_back({"adam.v." + entry.name, entry.shape});
    }
    if (has_best) expected.push_back({"best." + entry.name, entry.shape});
  }
  check_tensors(ckpt, expected, true);
  for (const auto& entry : layout) {
    if (has_moments) {
      st.optimizer.m.push_back(ckpt.find("adam.m." + entry.name)->data);
      st.optimizer.v.push_back(ckpt.find("adam.v." + entry.name)->data);
    }
    if (has_best) st.best_params.push_back(ckpt.find("best." + entry.name)->data);
  }
  return st;
}

}  // namespace vitforge

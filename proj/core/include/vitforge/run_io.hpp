#pragma once

#include <map>
#include <memory>
#include <string>

#include "vitforge/checkpoint.hpp"
#include "vitforge/config.hpp"
#include "vitforge/train.hpp"
#include "vitforge/vit.hpp"

// Mapping between runs and VITF checkpoints. The config blob is the
// canonical RunConfig text followed by `state.*` lines; tensors are the
// model parameters under their dotted names, plus `adam.m.*`, `adam.v.*`
// and `best.*` copies in resume checkpoints.

namespace vitforge {

/// Model parameters only, with best-epoch metadata from `state` if given.
Checkpoint model_checkpoint(const RunConfig& cfg, const ViTClassifier& model, const TrainState* state = nullptr);

/// Everything train() needs to continue: parameters, optimizer moments,
/// best-epoch parameters, counters, and the epoch history.
Checkpoint resume_checkpoint(const RunConfig& cfg, const ViTClassifier& model, const TrainState& state);

struct LoadedRun {
  RunConfig config;
  std::map<std::string, std::string> state;  // `state.*` entries
  std::unique_ptr<ViTClassifier> model;
};

/// Parses the config, validates every parameter shape against it, and only
/// then builds the model. Config problems raise MalformedCheckpointError.
LoadedRun load_run(const Checkpoint& ckpt);

/// Training state stored by resume_checkpoint. Throws
/// MalformedCheckpointError when the checkpoint holds model weights only.
TrainState load_train_state(const Checkpoint& ckpt, const LoadedRun& run);

}  // namespace vitforge

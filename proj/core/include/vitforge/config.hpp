#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitforge/dataset.hpp"
#include "vitforge/train.hpp"
#include "vitforge/vit.hpp"

namespace vitforge {

/// Unknown key, malformed value, or invalid combination. `line` is 0 when
/// the problem is not tied to one line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, std::size_t line, const std::string& message);
  const std::string& key() const { return key_; }
  std::size_t line() const { return line_; }

 private:
  std::string key_;
  std::size_t line_;
};

struct DataConfig {
  /// Dataset tree; empty means a generated synthetic dataset.
  std::string root;
  /// Directory holding train.idx / val.idx / test.idx; empty means split
  /// in memory (and write the lists to the output directory).
  std::string split_dir;
  std::size_t synthetic_per_class = 200;
  /// Seed of the synthetic generator; defaults to the run seed.
  std::uint64_t synthetic_seed = 0;
  bool synthetic_seed_set = false;
  /// Replace training labels with a seeded permutation (leakage control).
  bool shuffle_train_labels = false;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Every setting of a run. All fields have defaults, so an empty file is a
/// valid synthetic-data configuration.
struct RunConfig {
  std::uint64_t seed = 0;
  ViTConfig vit;
  TrainConfig train;
  SplitSpec split;
  AugmentSpec augment;
  bool augment_enabled = true;
  DataConfig data;
  std::string out = "run";
  std::string checkpoint;

  /// Pushes the run seed into every component seed.
  void apply_seed(std::uint64_t s);
  std::uint64_t synthetic_seed() const { return data.synthetic_seed_set ? data.synthetic_seed : seed; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// ignored, later assignments win. Keys under `state.` are returned in
/// `extra` when it is non-null and rejected otherwise.
RunConfig parse_config(const std::string& text, std::map<std::string, std::string>* extra = nullptr);
RunConfig load_config(const std::filesystem::path& file);

/// Applies one assignment, e.g. from a command-line override.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value, std::size_t line = 0);

/// Every key in sorted order with its canonical value; parse_config of the
/// result reproduces the configuration exactly.
std::string to_text(const RunConfig& cfg);

/// Names of all recognised keys.
std::vector<std::string> config_keys();

}  // namespace vitforge

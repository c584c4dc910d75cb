#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitforge/tensor.hpp"

// VITF container, all integers little-endian:
//   "VITF" | u32 version | u32 config length | config bytes (UTF-8)
//   | u32 tensor count | per tensor: u16 name length, name, u8 rank,
//     u32 dims[rank], f32 data[product(dims)]
// Nothing may follow the last tensor.

namespace vitforge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Tensor missing, unexpected, or shaped differently from the configuration.
class ShapeMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Structurally invalid content that is not one of the above.
class MalformedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

struct Checkpoint {
  std::string config_text;
  std::vector<CheckpointTensor> tensors;

  /// Null when absent.
  const CheckpointTensor* find(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Validates the whole byte string before returning anything.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes to a sibling temporary file, then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct ExpectedTensor {
  std::string name;
  Shape shape;
};

/// Throws ShapeMismatchError unless every expected tensor is present with
/// its shape. With `allow_extra` false, unexpected names are errors too.
void check_tensors(const Checkpoint& ckpt, const std::vector<ExpectedTensor>& expected, bool allow_extra);

}  // namespace vitforge

#pragma once

#include <cstddef>
#include <vector>

#include "vitforge/rng.hpp"
#include "vitforge/tensor.hpp"

namespace vitforge {

enum class Mode { train, eval };

/// Anything the trainer and evaluator can drive: images [B, H, W, C] in,
/// logits [B, K] out, with a stable list of learnable tensors.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual Tensor<float> forward(const Tensor<float>& images, Mode mode, Rng& rng) = 0;
  virtual std::vector<NamedTensor<float>> parameters() = 0;
  virtual std::size_t num_classes() const = 0;
};

}  // namespace vitforge

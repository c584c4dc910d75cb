#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vitforge/rng.hpp"
#include "vitforge/tensor.hpp"

// Differentiable tensor operations.
//
// Every operation records a backward rule on the active GradTape when at
// least one input requires a gradient. Broadcasting is limited to one rule:
// the second operand of add/sub/mul may have a shape equal to a trailing
// suffix of the first operand's shape (bias vectors, positional tables).
// Anything else raises DimensionError.

namespace vitforge {

/// a[..., m, k] x b[k, n] -> [..., m, n] (shared right operand), or
/// a[..., m, k] x b[..., k, n] -> [..., m, n] with equal leading dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// x[..., in] x w[in, out] + b[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Output axis i takes input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int axis0, int axis1);
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length);

/// Reductions remove `axis` from the shape (a rank-1 input reduces to [1]).
template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis);
template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis);

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate). Returns `a` itself when not training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, T rate, Rng& rng, bool training);

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis);

/// Normalizes over the last axis, then applies gain and bias of that width.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

/// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);

/// Mean over the batch of -log softmax(logits)[label]; logits are [B, K].
/// The gradient with respect to logits is (softmax - onehot) / B.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Index of the largest entry of each row of a [B, K] tensor (first on ties).
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

}  // namespace vitforge

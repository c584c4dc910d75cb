#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vitforge/classifier.hpp"
#include "vitforge/rng.hpp"
#include "vitforge/tensor.hpp"

namespace vitforge {

enum class Activation { gelu, relu };

/// Vision Transformer hyperparameters. Defaults are the 72x72x3, 6x6-patch,
/// 8-layer, 64-wide configuration with a (2042, 1048) classification head.
struct ViTConfig {
  std::size_t image_height = 72;
  std::size_t image_width = 72;
  std::size_t channels = 3;
  std::size_t patch_size = 6;
  std::size_t projection_dim = 64;
  std::size_t num_layers = 8;
  std::size_t num_heads = 4;
  std::vector<std::size_t> encoder_mlp_dims{128, 64};
  std::vector<std::size_t> head_dims{2042, 1048};
  std::size_t num_classes = 4;
  double dropout_rate = 0.1;
  double head_dropout_rate = 0.5;
  Activation activation = Activation::gelu;
  double layernorm_eps = 1e-6;
  double init_std = 0.02;

  std::size_t num_patches() const { return (image_height / patch_size) * (image_width / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  /// 12x12x1 image, 6x6 patches, width 8, 2 layers, 2 heads, head [16, 8].
  static ViTConfig miniature();

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <typename T>
struct EncoderLayerParams {
  NormParams<T> attention_norm;
  LinearParams<T> query;
  LinearParams<T> key;
  LinearParams<T> value;
  LinearParams<T> attention_output;
  NormParams<T> mlp_norm;
  std::vector<LinearParams<T>> mlp;
};

template <typename T>
struct ViTParams {
  LinearParams<T> patch_projection;
  Tensor<T> position_embedding;  // [N, D]
  std::vector<EncoderLayerParams<T>> layers;
  NormParams<T> head_norm;
  std::vector<LinearParams<T>> head;
  LinearParams<T> classifier;

  /// Every tensor with a dotted name, in a fixed order.
  std::vector<NamedTensor<T>> named() const;
};

/// Zero weights, unit layernorm gains.
template <typename T>
ViTParams<T> allocate_params(const ViTConfig& cfg);

/// Truncated-normal (2 sigma) weights and positional table, zero biases,
/// unit layernorm gains.
template <typename T>
ViTParams<T> init_params(const ViTConfig& cfg, Rng& rng);

struct ParamLayoutEntry {
  std::string name;
  Shape shape;
};
std::vector<ParamLayoutEntry> parameter_layout(const ViTConfig& cfg);

/// [B, H, W, C] -> [B, N, P*P*C]; patches in row-major grid order, each the
/// row-major flattening of its P x P x C block.
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch_size);

/// Inverse of patchify.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t height, std::size_t width, std::size_t channels,
                     std::size_t patch_size);

/// Linear projection of each patch plus the learned per-position embedding.
template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const LinearParams<T>& projection, const Tensor<T>& position_embedding);

/// Multi-head self-attention over x [B, N, D]. When `attention` is non-null,
/// each head's [B, H, N, N] weight tensor is appended to it.
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const EncoderLayerParams<T>& layer, std::size_t num_heads,
               std::vector<Tensor<T>>* attention = nullptr);

/// Pre-norm block: y = x + Drop(MHSA(LN(x))); out = y + Drop(MLP(LN(y))).
template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& x, const EncoderLayerParams<T>& layer, const ViTConfig& cfg, Mode mode,
                        Rng& rng, std::vector<Tensor<T>>* attention = nullptr);

/// Embedding, encoder stack, and final layernorm: patches -> tokens [B, N, D].
template <typename T>
Tensor<T> encode_patches(const Tensor<T>& patches, const ViTParams<T>& params, const ViTConfig& cfg, Mode mode,
                         Rng& rng, std::vector<Tensor<T>>* attention = nullptr);

/// Flatten, MLP head, and output projection: tokens [B, N, D] -> logits [B, K].
template <typename T>
Tensor<T> classify_tokens(const Tensor<T>& tokens, const ViTParams<T>& params, const ViTConfig& cfg, Mode mode,
                          Rng& rng);

/// images [B, H, W, C] -> logits [B, K].
template <typename T>
Tensor<T> vit_forward(const Tensor<T>& images, const ViTParams<T>& params, const ViTConfig& cfg, Mode mode, Rng& rng);

struct ParameterCount {
  std::size_t patch_projection = 0;
  std::size_t position_embedding = 0;
  std::size_t encoder = 0;
  std::size_t head = 0;  // head norm, head MLP, and output projection
  std::size_t total() const { return patch_projection + position_embedding + encoder + head; }
};

template <typename T>
ParameterCount count_parameters(const ViTParams<T>& params);
ParameterCount count_parameters(const ViTConfig& cfg);

class ViTClassifier final : public Classifier {
 public:
  ViTClassifier(ViTConfig cfg, std::uint64_t init_seed);
  ViTClassifier(ViTConfig cfg, ViTParams<float> params);

  Tensor<float> forward(const Tensor<float>& images, Mode mode, Rng& rng) override;
  std::vector<NamedTensor<float>> parameters() override;
  std::size_t num_classes() const override { return cfg_.num_classes; }

  const ViTConfig& config() const { return cfg_; }
  const ViTParams<float>& params() const { return params_; }

 private:
  ViTConfig cfg_;
  ViTParams<float> params_;
};

}  // namespace vitforge

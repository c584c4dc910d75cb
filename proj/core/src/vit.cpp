#include "vitforge/vit.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

#include "vitforge/ops.hpp"

namespace vitforge {

void ViTConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid ViT config: " + what); };
  if (image_height == 0 || image_width == 0 || channels == 0 || patch_size == 0 || projection_dim == 0 ||
      num_heads == 0 || num_classes == 0) {
    fail("all dimensions must be positive");
  }
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    fail(fmt::format("image {}x{} is not divisible by patch size {}", image_height, image_width, patch_size));
  }
  if (projection_dim % num_heads != 0) {
    fail(fmt::format("projection_dim {} is not divisible by num_heads {}", projection_dim, num_heads));
  }
  if (encoder_mlp_dims.empty() || encoder_mlp_dims.back() != projection_dim) {
    fail(fmt::format("encoder MLP must end at projection_dim {}", projection_dim));
  }
  for (auto d : encoder_mlp_dims)
    if (d == 0) fail("encoder MLP dims must be positive");
  for (auto d : head_dims)
    if (d == 0) fail("head dims must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0 || head_dropout_rate < 0.0 || head_dropout_rate >= 1.0) {
    fail("dropout rates must lie in [0, 1)");
  }
  if (!(layernorm_eps > 0.0)) fail("layernorm_eps must be positive");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

ViTConfig ViTConfig::miniature() {
  ViTConfig cfg;
  cfg.image_height = 12;
  cfg.image_width = 12;
  cfg.channels = 1;
  cfg.patch_size = 6;
  cfg.projection_dim = 8;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.encoder_mlp_dims = {16, 8};
  cfg.head_dims = {16, 8};
  return cfg;
}

namespace {

template <typename T>
LinearParams<T> make_linear(std::size_t in, std::size_t out) {
  return {Tensor<T>({in, out}), Tensor<T>({out})};
}

template <typename T>
NormParams<T> make_norm(std::size_t d) {
  return {Tensor<T>::full({d}, T(1)), Tensor<T>({d})};
}

template <typename T>
void push_linear(std::vector<NamedTensor<T>>& out, const std::string& prefix, const LinearParams<T>& p) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

template <typename T>
void push_norm(std::vector<NamedTensor<T>>& out, const std::string& prefix, const NormParams<T>& p) {
  out.push_back({prefix + ".gain", p.gain});
  out.push_back({prefix + ".bias", p.bias});
}

template <typename T>
void fill_truncated_normal(Tensor<T>& t, double std, Rng& rng) {
  for (auto& v : t.mutable_data()) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    v = static_cast<T>(z * std);
  }
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  return act == Activation::gelu ? gelu(x) : relu(x);
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> ViTParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  push_linear(out, "patch_projection", patch_projection);
  out.push_back({"position_embedding", position_embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string p = fmt::format("encoder.{}", l);
    push_norm(out, p + ".attention_norm", layer.attention_norm);
    push_linear(out, p + ".query", layer.query);
    push_linear(out, p + ".key", layer.key);
    push_linear(out, p + ".value", layer.value);
    push_linear(out, p + ".attention_output", layer.attention_output);
    push_norm(out, p + ".mlp_norm", layer.mlp_norm);
    for (std::size_t i = 0; i < layer.mlp.size(); ++i) push_linear(out, fmt::format("{}.mlp.{}", p, i), layer.mlp[i]);
  }
  push_norm(out, "head_norm", head_norm);
  for (std::size_t i = 0; i < head.size(); ++i) push_linear(out, fmt::format("head.{}", i), head[i]);
  push_linear(out, "classifier", classifier);
  return out;
}

template <typename T>
ViTParams<T> allocate_params(const ViTConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.projection_dim;
  ViTParams<T> p;
  p.patch_projection = make_linear<T>(cfg.patch_dim(), d);
  p.position_embedding = Tensor<T>({cfg.num_patches(), d});
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    EncoderLayerParams<T> layer;
    layer.attention_norm = make_norm<T>(d);
    layer.query = make_linear<T>(d, d);
    layer.key = make_linear<T>(d, d);
    layer.value = make_linear<T>(d, d);
    layer.attention_output = make_linear<T>(d, d);
    layer.mlp_norm = make_norm<T>(d);
    std::size_t in = d;
    for (auto width : cfg.encoder_mlp_dims) {
      layer.mlp.push_back(make_linear<T>(in, width));
      in = width;
    }
    p.layers.push_back(std::move(layer));
  }
  p.head_norm = make_norm<T>(d);
  std::size_t in = cfg.num_patches() * d;
  for (auto width : cfg.head_dims) {
    p.head.push_back(make_linear<T>(in, width));
    in = width;
  }
  p.classifier = make_linear<T>(in, cfg.num_classes);
  return p;
}

template <typename T>
ViTParams<T> init_params(const ViTConfig& cfg, Rng& rng) {
  ViTParams<T> p = allocate_params<T>(cfg);
  for (auto& [name, tensor] : p.named()) {
    const bool is_weight = name.ends_with(".weight") || name == "position_embedding";
    if (is_weight) fill_truncated_normal(tensor, cfg.init_std, rng);
  }
  return p;
}

std::vector<ParamLayoutEntry> parameter_layout(const ViTConfig& cfg) {
  std::vector<ParamLayoutEntry> out;
  for (const auto& [name, tensor] : allocate_params<float>(cfg).named()) out.push_back({name, tensor.shape()});
  return out;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch_size) {
  if (images.rank() != 4) {
    throw DimensionError(fmt::format("patchify expects [B, H, W, C], got {}", to_string(images.shape())));
  }
  const std::size_t b = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
    throw DimensionError(fmt::format("image H={} W={} is not divisible by patch size P={}", h, w, patch_size));
  }
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  auto grid = reshape(images, {b, gh, patch_size, gw, patch_size, c});
  auto blocks = permute(grid, {0, 1, 3, 2, 4, 5});
  return reshape(blocks, {b, gh * gw, patch_size * patch_size * c});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t height, std::size_t width, std::size_t channels,
                     std::size_t patch_size) {
  if (patches.rank() != 3 || patch_size == 0 || height % patch_size != 0 || width % patch_size != 0 ||
      patches.dim(1) != (height / patch_size) * (width / patch_size) ||
      patches.dim(2) != patch_size * patch_size * channels) {
    throw DimensionError(fmt::format("cannot unpatchify {} into H={} W={} C={} with P={}",
                                     to_string(patches.shape()), height, width, channels, patch_size));
  }
  const std::size_t b = patches.dim(0), gh = height / patch_size, gw = width / patch_size;
  auto blocks = reshape(patches, {b, gh, gw, patch_size, patch_size, channels});
  auto grid = permute(blocks, {0, 1, 3, 2, 4, 5});
  return reshape(grid, {b, height, width, channels});
}

template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const LinearParams<T>& projection, const Tensor<T>& position_embedding) {
  if (patches.rank() != 3 || patches.dim(2) != projection.weight.dim(0)) {
    throw DimensionError(fmt::format("embed: patches {} do not match projection {}", to_string(patches.shape()),
                                     to_string(projection.weight.shape())));
  }
  return add(linear(patches, projection.weight, projection.bias), position_embedding);
}

template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const EncoderLayerParams<T>& layer, std::size_t num_heads,
               std::vector<Tensor<T>>* attention) {
  if (x.rank() != 3) throw DimensionError(fmt::format("mhsa expects [B, N, D], got {}", to_string(x.shape())));
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (num_heads == 0 || d % num_heads != 0) {
    throw DimensionError(fmt::format("width {} is not divisible into {} heads", d, num_heads));
  }
  const std::size_t dh = d / num_heads;
  auto heads = [&](const Tensor<T>& t) { return permute(reshape(t, {b, n, num_heads, dh}), {0, 2, 1, 3}); };
  auto q = heads(linear(x, layer.query.weight, layer.query.bias));             // [B, H, N, dh]
  auto k = permute(reshape(linear(x, layer.key.weight, layer.key.bias), {b, n, num_heads, dh}),
                   {0, 2, 3, 1});                                               // [B, H, dh, N]
  auto v = heads(linear(x, layer.value.weight, layer.value.bias));             // [B, H, N, dh]
  auto scores = scale(matmul(q, k), T(1) / std::sqrt(static_cast<T>(dh)));   // [B, H, N, N]
  auto weights = softmax(scores, -1);
  if (attention) attention->push_back(weights);
  auto context = matmul(weights, v);                                           // [B, H, N, dh]
  auto merged = reshape(permute(context, {0, 2, 1, 3}), {b, n, d});
  return linear(merged, layer.attention_output.weight, layer.attention_output.bias);
}

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& x, const EncoderLayerParams<T>& layer, const ViTConfig& cfg, Mode mode,
                        Rng& rng, std::vector<Tensor<T>>* attention) {
  const bool training = mode == Mode::train;
  const T eps = static_cast<T>(cfg.layernorm_eps);
  const T rate = static_cast<T>(cfg.dropout_rate);

  auto normed = layernorm(x, layer.attention_norm.gain, layer.attention_norm.bias, eps);
  auto attended = dropout(mhsa(normed, layer, cfg.num_heads, attention), rate, rng, training);
  auto y = add(x, attended);

  auto h = layernorm(y, layer.mlp_norm.gain, layer.mlp_norm.bias, eps);
  for (const auto& dense : layer.mlp) {
    h = dropout(activate(linear(h, dense.weight, dense.bias), cfg.activation), rate, rng, training);
  }
  if (h.shape() != x.shape()) {
    throw DimensionError(fmt::format("encoder MLP output {} does not match input {}", to_string(h.shape()),
                                     to_string(x.shape())));
  }
  return add(y, h);
}

template <typename T>
Tensor<T> encode_patches(const Tensor<T>& patches, const ViTParams<T>& params, const ViTConfig& cfg, Mode mode,
                         Rng& rng, std::vector<Tensor<T>>* attention) {
  auto x = embed(patches, params.patch_projection, params.position_embedding);
  for (const auto& layer : params.layers) x = encoder_layer(x, layer, cfg, mode, rng, attention);
  return layernorm(x, params.head_norm.gain, params.head_norm.bias, static_cast<T>(cfg.layernorm_eps));
}

template <typename T>
Tensor<T> classify_tokens(const Tensor<T>& tokens, const ViTParams<T>& params, const ViTConfig& cfg, Mode mode,
                          Rng& rng) {
  const bool training = mode == Mode::train;
  const T rate = static_cast<T>(cfg.head_dropout_rate);
  auto h = dropout(reshape(tokens, {tokens.dim(0), tokens.dim(1) * tokens.dim(2)}), rate, rng, training);
  for (const auto& dense : params.head) {
    h = dropout(activate(linear(h, dense.weight, dense.bias), cfg.activation), rate, rng, training);
  }
  return linear(h, params.classifier.weight, params.classifier.bias);
}

template <typename T>
Tensor<T> vit_forward(const Tensor<T>& images, const ViTParams<T>& params, const ViTConfig& cfg, Mode mode,
                      Rng& rng) {
  if (images.rank() != 4 || images.dim(1) != cfg.image_height || images.dim(2) != cfg.image_width ||
      images.dim(3) != cfg.channels) {
    throw DimensionError(fmt::format("images {} do not match configured {}x{}x{}", to_string(images.shape()),
                                     cfg.image_height, cfg.image_width, cfg.channels));
  }
  auto tokens = encode_patches(patchify(images, cfg.patch_size), params, cfg, mode, rng);
  return classify_tokens(tokens, params, cfg, mode, rng);
}

template <typename T>
ParameterCount count_parameters(const ViTParams<T>& params) {
  ParameterCount c;
  for (const auto& [name, tensor] : params.named()) {
    if (name.starts_with("patch_projection.")) {
      c.patch_projection += tensor.size();
    } else if (name == "position_embedding") {
      c.position_embedding += tensor.size();
    } else if (name.starts_with("encoder.")) {
      c.encoder += tensor.size();
    } else {
      c.head += tensor.size();
    }
  }
  return c;
}

ParameterCount count_parameters(const ViTConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.projection_dim;
  ParameterCount c;
  c.patch_projection = cfg.patch_dim() * d + d;
  c.position_embedding = cfg.num_patches() * d;
  std::size_t per_layer = 2 * d + 4 * (d * d + d) + 2 * d;
  std::size_t in = d;
  for (auto w : cfg.encoder_mlp_dims) {
    per_layer += in * w + w;
    in = w;
  }
  c.encoder = per_layer * cfg.num_layers;
  c.head = 2 * d;
  in = cfg.num_patches() * d;
  for (auto w : cfg.head_dims) {
    c.head += in * w + w;
    in = w;
  }
  c.head += in * cfg.num_classes + cfg.num_classes;
  return c;
}

ViTClassifier::ViTClassifier(ViTConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  Rng rng(init_seed);
  params_ = init_params<float>(cfg_, rng);
  for (auto& [name, t] : params_.named()) t.set_requires_grad(true);
}

ViTClassifier::ViTClassifier(ViTConfig cfg, ViTParams<float> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  for (auto& [name, t] : params_.named()) t.set_requires_grad(true);
}

Tensor<float> ViTClassifier::forward(const Tensor<float>& images, Mode mode, Rng& rng) {
  return vit_forward(images, params_, cfg_, mode, rng);
}

std::vector<NamedTensor<float>> ViTClassifier::parameters() { return params_.named(); }

#define VITFORGE_INSTANTIATE_VIT(T)                                                                              \
  template struct ViTParams<T>;                                                                                  \
  template ViTParams<T> allocate_params<T>(const ViTConfig&);                                                    \
  template ViTParams<T> init_params<T>(const ViTConfig&, Rng&);                                                  \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                                    \
  template Tensor<T> unpatchify(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> embed(const Tensor<T>&, const LinearParams<T>&, const Tensor<T>&);                          \
  template Tensor<T> mhsa(const Tensor<T>&, const EncoderLayerParams<T>&, std::size_t, std::vector<Tensor<T>>*); \
  template Tensor<T> encoder_layer(const Tensor<T>&, const EncoderLayerParams<T>&, const ViTConfig&, Mode, Rng&, \
                                   std::vector<Tensor<T>>*);                                                     \
  template Tensor<T> encode_patches(const Tensor<T>&, const ViTParams<T>&, const ViTConfig&, Mode, Rng&,        \
                                    std::vector<Tensor<T>>*);                                                    \
  template Tensor<T> classify_tokens(const Tensor<T>&, const ViTParams<T>&, const ViTConfig&, Mode, Rng&);       \
  template Tensor<T> vit_forward(const Tensor<T>&, const ViTParams<T>&, const ViTConfig&, Mode, Rng&);           \
  template ParameterCount count_parameters(const ViTParams<T>&);

VITFORGE_INSTANTIATE_VIT(float)
VITFORGE_INSTANTIATE_VIT(double)

}  // namespace vitforge

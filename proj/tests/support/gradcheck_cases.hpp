#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "vitforge/ops.hpp"
#include "vitforge/vit.hpp"

namespace vitforge::testing {

/// One op (or model piece) and the reports of its finite-difference checks.
struct GradCase {
  using Reports = std::vector<GradReport>;
  std::string name;
  std::function<void(Reports&)> run;
};

namespace detail {

inline EncoderLayerParams<double> random_layer(std::size_t d, const std::vector<std::size_t>& mlp, Rng& rng) {
  EncoderLayerParams<double> p;
  auto lin = [&](std::size_t in, std::size_t out) {
    return LinearParams<double>{random_tensor({in, out}, rng, -0.8, 0.8), random_tensor({out}, rng, -0.2, 0.2)};
  };
  p.attention_norm = {random_tensor({d}, rng, 0.5, 1.5), random_tensor({d}, rng, -0.2, 0.2)};
  p.query = lin(d, d);
  p.key = lin(d, d);
  p.value = lin(d, d);
  p.attention_output = lin(d, d);
  p.mlp_norm = {random_tensor({d}, rng, 0.5, 1.5), random_tensor({d}, rng, -0.2, 0.2)};
  std::size_t in = d;
  for (auto out : mlp) {
    p.mlp.push_back(lin(in, out));
    in = out;
  }
  return p;
}

inline std::vector<Tensor<double>> layer_tensors(const EncoderLayerParams<double>& p) {
  std::vector<Tensor<double>> out{p.attention_norm.gain, p.attention_norm.bias, p.query.weight,  p.query.bias,
                      p.key.weight,          p.key.bias,            p.value.weight,  p.value.bias,
                      p.attention_output.weight, p.attention_output.bias, p.mlp_norm.gain, p.mlp_norm.bias};
  for (const auto& l : p.mlp) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

}  // namespace detail

/// Every differentiable op in float64, ending with the miniature ViT.
inline std::vector<GradCase> gradcheck_cases() {
  using Reports = GradCase::Reports;
  using Td = Tensor<double>;
  using detail::layer_tensors;
  using detail::random_layer;
  std::vector<GradCase> cases;
  auto push = [&cases](std::string name, std::function<void(Reports&)> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  push("Matmul", [](Reports& out) {
    Rng rng(1);
    auto a = random_tensor({7, 5}, rng), b = random_tensor({5, 3}, rng), w = random_tensor({7, 3}, rng);
    out.push_back(gradcheck({a, b}, [&] { return contract(matmul(a, b), w); }));
  });

  push("MatmulBatchedSharedRight", [](Reports& out) {
    Rng rng(2);
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng), w = random_tensor({2, 3, 5}, rng);
    out.push_back(gradcheck({a, b}, [&] { return contract(matmul(a, b), w); }));
  });

  push("MatmulBatchedBoth", [](Reports& out) {
    Rng rng(3);
    auto a = random_tensor({2, 2, 3, 4}, rng), b = random_tensor({2, 2, 4, 2}, rng);
    auto w = random_tensor({2, 2, 3, 2}, rng);
    out.push_back(gradcheck({a, b}, [&] { return contract(matmul(a, b), w); }));
  });

  push("ElementwiseWithBroadcast", [](Reports& out) {
    Rng rng(4);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), v = random_tensor({4}, rng);
    auto w = random_tensor({3, 4}, rng);
    out.push_back(gradcheck({a, b}, [&] { return contract(add(a, b), w); }));
    out.push_back(gradcheck({a, b}, [&] { return contract(sub(a, b), w); }));
    out.push_back(gradcheck({a, b}, [&] { return contract(mul(a, b), w); }));
    out.push_back(gradcheck({a, v}, [&] { return contract(add(a, v), w); }));
    out.push_back(gradcheck({a, v}, [&] { return contract(sub(a, v), w); }));
    out.push_back(gradcheck({a, v}, [&] { return contract(mul(a, v), w); }));
    out.push_back(gradcheck({a}, [&] { return contract(scale(a, -2.5), w); }));
  });

  push("Linear", [](Reports& out) {
    Rng rng(5);
    auto x = random_tensor({2, 3, 4}, rng), wt = random_tensor({4, 5}, rng), b = random_tensor({5}, rng);
    auto w = random_tensor({2, 3, 5}, rng);
    out.push_back(gradcheck({x, wt, b}, [&] { return contract(linear(x, wt, b), w); }));
  });

  push("ShapeOps", [](Reports& out) {
    Rng rng(6);
    auto a = random_tensor({2, 3, 4}, rng);
    auto w1 = random_tensor({4, 6}, rng);
    out.push_back(gradcheck({a}, [&] { return contract(reshape(a, {4, 6}), w1); }));
    auto w2 = random_tensor({4, 2, 3}, rng);
    out.push_back(gradcheck({a}, [&] { return contract(permute(a, {2, 0, 1}), w2); }));
    auto w3 = random_tensor({4, 3, 2}, rng);
    out.push_back(gradcheck({a}, [&] { return contract(transpose(a, 0, 2), w3); }));
    auto w4 = random_tensor({2, 2, 4}, rng);
    out.push_back(gradcheck({a}, [&] { return contract(slice(a, 1, 1, 2), w4); }));
    auto b = random_tensor({2, 2, 4}, rng);
    auto w5 = random_tensor({2, 5, 4}, rng);
    out.push_back(gradcheck({a, b}, [&] {
      std::vector<Td> parts{a, b};
      return contract(concat<double>(parts, 1), w5);
    }));
  });

  push("Reductions", [](Reports& out) {
    Rng rng(7);
    auto a = random_tensor({3, 4, 2}, rng);
    auto w = random_tensor({3, 2}, rng);
    out.push_back(gradcheck({a}, [&] { return contract(sum(a, 1), w); }));
    out.push_back(gradcheck({a}, [&] { return contract(mean(a, 1), w); }));
    auto w0 = random_tensor({4, 2}, rng);
    out.push_back(gradcheck({a}, [&] { return contract(mean(a, 0), w0); }));
  });

  push("Softmax", [](Reports& out) {
    Rng rng(8);
    auto a = random_tensor({4, 10}, rng, -3.0, 3.0);
    auto w = random_tensor({4, 10}, rng);
    out.push_back(gradcheck({a}, [&] { return contract(softmax(a, -1), w); }));
    out.push_back(gradcheck({a}, [&] { return contract(softmax(a, 0), w); }));
  });

  push("Layernorm", [](Reports& out) {
    Rng rng(9);
    auto x = random_tensor({3, 6}, rng, -2.0, 2.0), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    auto w = random_tensor({3, 6}, rng);
    out.push_back(gradcheck({x, g, b}, [&] { return contract(layernorm(x, g, b, 1e-6), w); }));
  });

  push("Activations", [](Reports& out) {
    Rng rng(10);
    auto a = random_tensor({5, 6}, rng, -3.0, 3.0);
    auto w = random_tensor({5, 6}, rng);
    out.push_back(gradcheck({a}, [&] { return contract(gelu(a), w); }));
    // Keep relu inputs away from the kink.
    for (auto& v : a.mutable_data()) v += v < 0 ? -0.1 : 0.1;
    out.push_back(gradcheck({a}, [&] { return contract(relu(a), w); }));
  });

  push("DropoutWithFixedMask", [](Reports& out) {
    Rng rng(11);
    auto a = random_tensor({4, 8}, rng);
    auto w = random_tensor({4, 8}, rng);
    out.push_back(gradcheck({a}, [&] {
      Rng mask(99);
      return contract(dropout(a, 0.3, mask, true), w);
    }));
  });

  push("SoftmaxCrossEntropy", [](Reports& out) {
    Rng rng(12);
    auto logits = random_tensor({5, 4}, rng, -2.0, 2.0);
    const std::vector<int> labels{0, 3, 1, 1, 2};
    out.push_back(gradcheck({logits}, [&] { return softmax_cross_entropy(logits, labels); }));
  });

  push("PatchifyAndUnpatchify", [](Reports& out) {
    Rng rng(13);
    auto img = random_tensor({2, 4, 6, 2}, rng);
    auto w = random_tensor({2, 6, 8}, rng);
    out.push_back(gradcheck({img}, [&] { return contract(patchify(img, 2), w); }));
    auto patches = random_tensor({1, 6, 8}, rng);
    auto wi = random_tensor({1, 4, 6, 2}, rng);
    out.push_back(gradcheck({patches}, [&] { return contract(unpatchify(patches, 4, 6, 2, 2), wi); }));
  });

  push("EmbedPositionalTable", [](Reports& out) {
    Rng rng(14);
    auto patches = random_tensor({2, 3, 5}, rng);
    LinearParams<double> proj{random_tensor({5, 4}, rng), random_tensor({4}, rng)};
    auto pos = random_tensor({3, 4}, rng);
    auto w = random_tensor({2, 3, 4}, rng);
    out.push_back(gradcheck({pos, proj.weight, proj.bias, patches},
                                     [&] { return contract(embed(patches, proj, pos), w); }));
  });

  push("MultiHeadSelfAttention", [](Reports& out) {
    Rng rng(15);
    auto layer = random_layer(4, {6, 4}, rng);
    auto x = random_tensor({2, 3, 4}, rng);
    auto w = random_tensor({2, 3, 4}, rng);
    for (std::size_t heads : {1u, 2u}) {
      auto inputs = layer_tensors(layer);
      inputs.resize(10);
      inputs.push_back(x);
      out.push_back(gradcheck(inputs, [&] { return contract(mhsa(x, layer, heads), w); }));
    }
  });

  push("EncoderLayer", [](Reports& out) {
    Rng rng(16);
    ViTConfig cfg;
    cfg.projection_dim = 4;
    cfg.num_heads = 2;
    cfg.encoder_mlp_dims = {8, 4};
    cfg.dropout_rate = 0.0;
    auto layer = random_layer(4, cfg.encoder_mlp_dims, rng);
    auto x = random_tensor({1, 3, 4}, rng);
    auto w = random_tensor({1, 3, 4}, rng);
    auto inputs = layer_tensors(layer);
    inputs.push_back(x);
    Rng unused(0);
    out.push_back(
        gradcheck(inputs, [&] { return contract(encoder_layer(x, layer, cfg, Mode::eval, unused), w); }));
    cfg.activation = Activation::relu;
    out.push_back(
        gradcheck(inputs, [&] { return contract(encoder_layer(x, layer, cfg, Mode::eval, unused), w); }));
  });

  push("MiniatureViT", [](Reports& out) {
    const ViTConfig cfg = ViTConfig::miniature();
    Rng rng(17);
    auto params = init_params<double>(cfg, rng);
    // Larger weights than the 0.02 initialisation so no gradient is negligible.
    for (auto& [name, t] : params.named()) {
      for (auto& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
    }
    auto images = random_tensor({2, 12, 12, 1}, rng, 0.0, 1.0);
    const std::vector<int> labels{1, 3};
    std::vector<Td> inputs;
    for (const auto& [name, t] : params.named()) inputs.push_back(t);
    inputs.push_back(images);
    Rng unused(0);
    auto report = gradcheck(inputs, [&] {
      return softmax_cross_entropy(vit_forward(images, params, cfg, Mode::eval, unused), labels);
    });
    report.expected = count_parameters(cfg).total() + images.size();
    out.push_back(report);
  });
  return cases;
}

}  // namespace vitforge::testing

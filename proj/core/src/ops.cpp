#include "vitforge/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "vitforge/parallel.hpp"

namespace vitforge {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

// Fixed row blocking keeps GEMM results independent of the thread count.
constexpr std::size_t kRowBlock = 256;

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (GradTape<T>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
void record(Tensor<T>& out, typename GradTape<T>::Rule rule) {
  out.set_requires_grad(true);
  GradTape<T>::active()->record(std::move(rule));
}

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(fmt::format("axis {} out of range for shape {}", axis, to_string(shape)));
  }
  return static_cast<std::size_t>(a);
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.begin(), suffix.end(), full.end() - static_cast<std::ptrdiff_t>(suffix.size()));
}

template <typename T>
void check_broadcast(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!is_suffix(a.shape(), b.shape()) || b.size() == 0) {
    throw DimensionError(fmt::format("{}: shapes {} and {} are not equal and the second is not a trailing suffix of the first",
                                     op, to_string(a.shape()), to_string(b.shape())));
  }
}

template <typename T>
void gemm_rows(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  parallel_for(blocks, [&](std::size_t blk) {
    const std::size_t r0 = blk * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - r0);
    ConstMap<T> A(a + r0 * k, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    ConstMap<T> B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    MutMap<T> C(c + r0 * n, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
    if (accumulate) {
      C.noalias() += A * B;
    } else {
      C.noalias() = A * B;
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError(fmt::format("matmul needs rank >= 2 operands, got {} and {}", to_string(a.shape()),
                                     to_string(b.shape())));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw DimensionError(fmt::format("matmul inner dimensions disagree: {} x {}", to_string(a.shape()),
                                     to_string(b.shape())));
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;

  if (b.rank() == 2) {
    const std::size_t rows = a.size() / k;
    auto out = Tensor<T>::uninitialized(out_shape);
    gemm_rows(a.data().data(), b.data().data(), out.mutable_data().data(), rows, k, n, false);
    if (recording<T>({&a, &b})) {
      record(out, [a, b, out, rows, k, n]() mutable {
        if (!out.has_grad()) return;
        const T* g = out.grad().data();
        if (a.requires_grad()) {
          // dA[rows, k] += dC[rows, n] * B^T
          T* ga = a.grad_buffer().data();
          const std::size_t blocks = (rows + kRowBlock - 1) / kRowBlock;
          parallel_for(blocks, [&](std::size_t blk) {
            const std::size_t r0 = blk * kRowBlock;
            const std::size_t nr = std::min(kRowBlock, rows - r0);
            ConstMap<T> G(g + r0 * n, static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(n));
            ConstMap<T> B(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
            MutMap<T> GA(ga + r0 * k, static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(k));
            GA.noalias() += G * B.transpose();
          });
        }
        if (b.requires_grad()) {
          // dB[k, n] += A^T * dC
          ConstMap<T> A(a.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
          ConstMap<T> G(g, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
          MutMap<T> GB(b.grad_buffer().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
          GB.noalias() += A.transpose() * G;
        }
      });
    }
    return out;
  }

  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    throw DimensionError(fmt::format("batched matmul needs equal leading dimensions: {} x {}",
                                     to_string(a.shape()), to_string(b.shape())));
  }
  const std::size_t batch = a.size() / (m * k);
  auto out = Tensor<T>::uninitialized(out_shape);
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = out.mutable_data().data();
    parallel_for(batch, [&](std::size_t i) {
      ConstMap<T> A(pa + i * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
      ConstMap<T> B(pb + i * k * n, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
      MutMap<T> C(pc + i * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
      C.noalias() = A * B;
    });
  }
  if (recording<T>({&a, &b})) {
    record(out, [a, b, out, batch, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* ga = a.requires_grad() ? a.grad_buffer().data() : nullptr;
      T* gb = b.requires_grad() ? b.grad_buffer().data() : nullptr;
      const T* pa = a.data().data();
      const T* pb = b.data().data();
      parallel_for(batch, [&](std::size_t i) {
        ConstMap<T> G(g + i * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        if (ga) {
          ConstMap<T> B(pb + i * k * n, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
          MutMap<T> GA(ga + i * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
          GA.noalias() += G * B.transpose();
        }
        if (gb) {
          ConstMap<T> A(pa + i * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
          MutMap<T> GB(gb + i * k * n, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
          GB.noalias() += A.transpose() * G;
        }
      });
    });
  }
  return out;
}

namespace {

enum class Binary { add, sub, mul };

template <typename T>
Tensor<T> binary(Binary kind, const char* name, const Tensor<T>& a, const Tensor<T>& b) {
  check_broadcast(name, a, b);
  const std::size_t nb = b.size();
  const std::size_t reps = a.size() / nb;
  auto out = Tensor<T>::uninitialized(a.shape());
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.mutable_data().data();
    for (std::size_t r = 0; r < reps; ++r) {
      const T* ra = pa + r * nb;
      T* ro = po + r * nb;
      switch (kind) {
        case Binary::add:
          for (std::size_t i = 0; i < nb; ++i) ro[i] = ra[i] + pb[i];
          break;
        case Binary::sub:
          for (std::size_t i = 0; i < nb; ++i) ro[i] = ra[i] - pb[i];
          break;
        case Binary::mul:
          for (std::size_t i = 0; i < nb; ++i) ro[i] = ra[i] * pb[i];
          break;
      }
    }
  }
  if (recording<T>({&a, &b})) {
    record(out, [kind, a, b, out, reps, nb]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad_buffer().data();
        if (kind == Binary::mul) {
          const T* pb = b.data().data();
          for (std::size_t r = 0; r < reps; ++r)
            for (std::size_t i = 0; i < nb; ++i) ga[r * nb + i] += g[r * nb + i] * pb[i];
        } else {
          for (std::size_t i = 0; i < reps * nb; ++i) ga[i] += g[i];
        }
      }
      if (b.requires_grad()) {
        T* gb = b.grad_buffer().data();
        const T* pa = a.data().data();
        for (std::size_t r = 0; r < reps; ++r) {
          for (std::size_t i = 0; i < nb; ++i) {
            const T gi = g[r * nb + i];
            switch (kind) {
              case Binary::add: gb[i] += gi; break;
              case Binary::sub: gb[i] -= gi; break;
              case Binary::mul: gb[i] += gi * pa[r * nb + i]; break;
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::add, "add", a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::sub, "sub", a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::mul, "mul", a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto out = Tensor<T>::uninitialized(a.shape());
  auto po = out.mutable_data();
  auto pa = a.data();
  for (std::size_t i = 0; i < pa.size(); ++i) po[i] = pa[i] * factor;
  if (recording<T>({&a})) {
    record(out, [a, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError(fmt::format("cannot reshape {} into {}", to_string(a.shape()), to_string(shape)));
  }
  auto out = Tensor<T>::uninitialized(std::move(shape));
  std::copy(a.data().begin(), a.data().end(), out.mutable_data().begin());
  if (recording<T>({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

namespace {

// For each output linear index, the input linear index under `perm`.
std::vector<std::size_t> permutation_map(const Shape& in_shape, const std::vector<std::size_t>& perm) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride_of_out(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    stride_of_out[i] = in_strides[perm[i]];
  }
  const std::size_t total = numel(in_shape);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    map[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += stride_of_out[d];
      if (idx[d] < out_shape[d]) break;
      src -= stride_of_out[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  std::vector<bool> seen(r, false);
  if (perm.size() != r ||
      !std::all_of(perm.begin(), perm.end(), [&](std::size_t p) { return p < r && !seen[p] && (seen[p] = true); })) {
    throw DimensionError(fmt::format("invalid permutation [{}] for shape {}", fmt::join(perm, ", "),
                                     to_string(a.shape())));
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[perm[i]];
  auto map = permutation_map(a.shape(), perm);
  auto out = Tensor<T>::uninitialized(out_shape);
  auto po = out.mutable_data();
  auto pa = a.data();
  for (std::size_t o = 0; o < map.size(); ++o) po[o] = pa[map[o]];
  if (recording<T>({&a})) {
    record(out, [a, out, map = std::move(map)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t o = 0; o < map.size(); ++o) ga[map[o]] += g[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int axis0, int axis1) {
  std::vector<std::size_t> perm(a.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[normalize_axis(axis0, a.rank(), a.shape())], perm[normalize_axis(axis1, a.rank(), a.shape())]);
  return permute(a, perm);
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), first);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == ax || p.shape()[i] == first[i];
    if (!ok) {
      throw DimensionError(fmt::format("concat along axis {}: {} does not match {}", axis, to_string(p.shape()),
                                       to_string(first)));
    }
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  auto out = Tensor<T>::uninitialized(out_shape);
  auto po = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.shape()[ax] * s.inner;
    auto pp = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pp.begin() + o * chunk, chunk, po.begin() + o * s.length * s.inner + offset);
    offset += chunk;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && GradTape<T>::active()) {
    std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
    record(out, [inputs, out, s, ax]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        const std::size_t chunk = p.shape()[ax] * s.inner;
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[o * s.length * s.inner + offset + i];
        }
        offset += chunk;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, a.rank(), a.shape());
  if (length == 0 || start + length > a.shape()[ax]) {
    throw DimensionError(fmt::format("slice [{}, {}) out of range on axis {} of {}", start, start + length, axis,
                                     to_string(a.shape())));
  }
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  auto out = Tensor<T>::uninitialized(out_shape);
  auto po = out.mutable_data();
  auto pa = a.data();
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(pa.begin() + o * s.length * s.inner + start * s.inner, chunk, po.begin() + o * chunk);
  if (recording<T>({&a})) {
    record(out, [a, out, s, start, chunk]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < chunk; ++i) ga[o * s.length * s.inner + start * s.inner + i] += g[o * chunk + i];
    });
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& a, int axis, bool average) {
  const std::size_t ax = normalize_axis(axis, a.rank(), a.shape());
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  if (out_shape.empty()) out_shape.push_back(1);
  const T factor = average ? T(1) / static_cast<T>(s.length) : T(1);
  auto out = Tensor<T>::uninitialized(out_shape);
  auto po = out.mutable_data();
  auto pa = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      T acc = 0;
      for (std::size_t l = 0; l < s.length; ++l) acc += pa[(o * s.length + l) * s.inner + i];
      po[o * s.inner + i] = acc * factor;
    }
  }
  if (recording<T>({&a})) {
    record(out, [a, out, s, factor]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.length; ++l)
          for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.length + l) * s.inner + i] += g[o * s.inner + i] * factor;
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis) {
  return reduce_axis(a, axis, false);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis) {
  return reduce_axis(a, axis, true);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, T rate, Rng& rng, bool training) {
  if (rate < T(0) || rate >= T(1)) throw std::invalid_argument(fmt::format("dropout rate {} outside [0, 1)", rate));
  if (!training || rate == T(0)) return a;
  const T keep_scale = T(1) / (T(1) - rate);
  // Each 64-bit draw decides two elements through its 32-bit halves.
  const auto threshold = static_cast<std::uint64_t>(static_cast<double>(rate) * 4294967296.0);
  std::vector<std::uint8_t> keep(a.size());
  for (std::size_t i = 0; i < keep.size(); i += 2) {
    const std::uint64_t r = rng.next_u64();
    keep[i] = (r & 0xffffffffu) >= threshold;
    if (i + 1 < keep.size()) keep[i + 1] = (r >> 32) >= threshold;
  }
  auto out = Tensor<T>::uninitialized(a.shape());
  auto po = out.mutable_data();
  auto pa = a.data();
  for (std::size_t i = 0; i < keep.size(); ++i) po[i] = keep[i] ? pa[i] * keep_scale : T(0);
  if (recording<T>({&a})) {
    record(out, [a, out, keep = std::move(keep), keep_scale]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (keep[i]) ga[i] += g[i] * keep_scale;
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank(), a.shape());
  const AxisSplit s = split_at(a.shape(), ax);
  auto out = Tensor<T>::uninitialized(a.shape());
  auto po = out.mutable_data();
  auto pa = a.data();
  if (s.inner == 1) {
    const auto len = static_cast<Eigen::Index>(s.length);
    for (std::size_t o = 0; o < s.outer; ++o) {
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> x(pa.data() + o * s.length, len);
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> y(po.data() + o * s.length, len);
      y = (x - x.maxCoeff()).exp();
      y *= T(1) / y.sum();
    }
  } else {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.length * s.inner + i;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t l = 0; l < s.length; ++l) mx = std::max(mx, pa[base + l * s.inner]);
        T total = 0;
        for (std::size_t l = 0; l < s.length; ++l) {
          const T e = std::exp(pa[base + l * s.inner] - mx);
          po[base + l * s.inner] = e;
          total += e;
        }
        const T inv = T(1) / total;
        for (std::size_t l = 0; l < s.length; ++l) po[base + l * s.inner] *= inv;
      }
    }
  }
  if (recording<T>({&a})) {
    record(out, [a, out, s]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto ga = a.grad_buffer();
      if (s.inner == 1) {
        const auto len = static_cast<Eigen::Index>(s.length);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const std::size_t base = o * s.length;
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> gy(g.data() + base, len);
          Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> yy(y.data() + base, len);
          Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> gx(ga.data() + base, len);
          const T dot = (gy * yy).sum();
          gx += yy * (gy - dot);
        }
        return;
      }
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.length * s.inner + i;
          T dot = 0;
          for (std::size_t l = 0; l < s.length; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
          for (std::size_t l = 0; l < s.length; ++l) {
            const std::size_t j = base + l * s.inner;
            ga[j] += y[j] * (g[j] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (a.rank() == 0 || gain.rank() != 1 || bias.rank() != 1 || gain.size() != a.dim(-1) ||
      bias.size() != a.dim(-1)) {
    throw DimensionError(fmt::format("layernorm: input {} with gain {} and bias {}", to_string(a.shape()),
                                     to_string(gain.shape()), to_string(bias.shape())));
  }
  if (!(eps > T(0))) throw std::invalid_argument("layernorm eps must be positive");
  const std::size_t d = a.dim(-1);
  const std::size_t rows = a.size() / d;
  auto out = Tensor<T>::uninitialized(a.shape());
  std::vector<T> xhat(a.size());
  std::vector<T> rstd(rows);
  {
    auto pa = a.data();
    auto po = out.mutable_data();
    auto pg = gain.data();
    auto pb = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* x = pa.data() + r * d;
      T mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += x[j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= static_cast<T>(d);
      const T rs = T(1) / std::sqrt(var + eps);
      rstd[r] = rs;
      for (std::size_t j = 0; j < d; ++j) {
        const T h = (x[j] - mu) * rs;
        xhat[r * d + j] = h;
        po[r * d + j] = h * pg[j] + pb[j];
      }
    }
  }
  if (recording<T>({&a, &gain, &bias})) {
    record(out, [a, gain, bias, out, xhat = std::move(xhat), rstd = std::move(rstd), d, rows]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto pg = gain.data();
      if (gain.requires_grad()) {
        auto gg = gain.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        const T inv_d = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0;
          T mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * pg[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * pg[j];
            ga[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  auto out = Tensor<T>::uninitialized(a.shape());
  auto po = out.mutable_data();
  auto pa = a.data();
  {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    Eigen::Map<const Arr> x(pa.data(), static_cast<Eigen::Index>(pa.size()));
    Eigen::Map<Arr> y(po.data(), static_cast<Eigen::Index>(po.size()));
    y = T(0.5) * x * (T(1) + (x * inv_sqrt2).erf());
  }
  if (recording<T>({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad()) return;
      constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
      auto g = out.grad();
      auto pa = a.data();
      auto ga = a.grad_buffer();
      using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
      const auto n = static_cast<Eigen::Index>(g.size());
      Eigen::Map<const Arr> x(pa.data(), n);
      Eigen::Map<const Arr> gy(g.data(), n);
      Eigen::Map<Arr> gx(ga.data(), n);
      gx += gy * (T(0.5) * (T(1) + (x * T(1) / std::numbers::sqrt2_v<T>).erf()) + x * inv_sqrt2pi * (T(-0.5) * x.square()).exp());
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  auto out = Tensor<T>::uninitialized(a.shape());
  auto po = out.mutable_data();
  auto pa = a.data();
  for (std::size_t i = 0; i < pa.size(); ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  if (recording<T>({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto pa = a.data();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (pa[i] > T(0)) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError(fmt::format("cross entropy: logits {} with {} labels", to_string(logits.shape()),
                                     labels.size()));
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t k = logits.dim(1);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) {
      throw std::out_of_range(fmt::format("label {} at position {} outside [0, {})", labels[b], b, k));
    }
  }
  std::vector<T> probs(logits.size());
  T total = 0;
  auto pl = logits.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const T* z = pl.data() + b * k;
    const T mx = *std::max_element(z, z + k);
    T denom = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[b * k + j] = std::exp(z[j] - mx);
      denom += probs[b * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[b * k + j] /= denom;
    total += std::log(denom) + mx - z[labels[b]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(batch));
  if (recording<T>({&logits})) {
    std::vector<int> owned(labels.begin(), labels.end());
    record(out, [logits, out, probs = std::move(probs), owned = std::move(owned), batch, k]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(batch);
      auto gl = logits.grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          const T onehot = static_cast<std::size_t>(owned[b]) == j ? T(1) : T(0);
          gl[b * k + j] += g * (probs[b * k + j] - onehot);
        }
      }
    });
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError(fmt::format("argmax_rows on {}", to_string(logits.shape())));
  const std::size_t k = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  auto p = logits.data();
  for (std::size_t b = 0; b < out.size(); ++b) {
    const T* row = p.data() + b * k;
    out[b] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

#define VITFORGE_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                      \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);            \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                 \
  template Tensor<T> concat(std::span<const Tensor<T>>, int);                               \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                \
  template Tensor<T> sum(const Tensor<T>&, int);                                            \
  template Tensor<T> mean(const Tensor<T>&, int);                                           \
  template Tensor<T> dropout(const Tensor<T>&, T, Rng&, bool);                              \
  template Tensor<T> softmax(const Tensor<T>&, int);                                        \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> gelu(const Tensor<T>&);                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);         \
  template std::vector<int> argmax_rows(const Tensor<T>&);

VITFORGE_INSTANTIATE_OPS(float)
VITFORGE_INSTANTIATE_OPS(double)

}  // namespace vitforge

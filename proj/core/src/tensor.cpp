#include "vitforge/tensor.hpp"

#include <fmt/format.h>

namespace vitforge {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, ", "));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : s_(std::make_shared<Storage>()) {
  s_->data.assign(numel(shape), fill);
  s_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : s_(std::make_shared<Storage>()) {
  if (numel(shape) != data.size()) {
    throw DimensionError(fmt::format("tensor of shape {} needs {} elements, got {}",
                                     to_string(shape), numel(shape), data.size()));
  }
  s_->shape = std::move(shape);
  s_->data.assign(data.begin(), data.end());
}

template <typename T>
Tensor<T> Tensor<T>::uninitialized(Shape shape) {
  Tensor out(Shape{0});
  out.s_->data.resize(numel(shape));
  out.s_->shape = std::move(shape);
  return out;
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(fmt::format("axis {} out of range for shape {}", axis, to_string(shape())));
  }
  return s_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw DimensionError(fmt::format("item() on tensor of shape {}", to_string(shape())));
  }
  return s_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), T(0));
  return s_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out = uninitialized(s_->shape);
  std::copy(s_->data.begin(), s_->data.end(), out.s_->data.begin());
  out.s_->requires_grad = s_->requires_grad;
  return out;
}

template <typename T>
void GradTape<T>::backward(Tensor<T> output) {
  if (output.size() != 1) {
    throw DimensionError(fmt::format("backward() without a seed needs a single-element output, got {}",
                                     to_string(output.shape())));
  }
  const T one = T(1);
  backward(std::move(output), std::span<const T>(&one, 1));
}

template <typename T>
void GradTape<T>::backward(Tensor<T> output, std::span<const T> seed) {
  if (seed.size() != output.size()) {
    throw DimensionError(fmt::format("gradient seed has {} elements, output {} has {}", seed.size(),
                                     to_string(output.shape()), output.size()));
  }
  auto g = output.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  replay();
}

template <typename T>
void GradTape<T>::replay() {
  NoGradScope<T> no_grad;
  while (!rules_.empty()) {
    Rule rule = std::move(rules_.back());
    rules_.pop_back();
    rule();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;

}  // namespace vitforge

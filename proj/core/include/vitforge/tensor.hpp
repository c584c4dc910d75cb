#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vitforge {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised by any operation whose operand shapes violate its documented rule.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Allocator whose value-initialization is default-initialization, so
/// resizing a buffer of floats does not zero it. Blocks are 64-byte aligned
/// so vectorized kernels take the same code path on every allocation.
template <typename T>
struct UninitAllocator : std::allocator<T> {
  static constexpr std::align_val_t kAlignment{64};

  template <typename U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <typename U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t n) noexcept { ::operator delete(p, n * sizeof(T), kAlignment); }
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
using Buffer = std::vector<T, UninitAllocator<T>>;

/// Dense row-major tensor handle.
///
/// Copies share storage (and gradient buffer); use clone() for a deep copy.
/// Data is treated as immutable once an operation has consumed it, except
/// for optimizer updates on leaf parameters.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{0}) {}
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  /// Contents are indeterminate; for outputs that are written in full.
  static Tensor uninitialized(Shape shape);
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  /// Size of dimension `axis`; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t size() const { return s_->data.size(); }

  std::span<const T> data() const { return s_->data; }
  std::span<T> mutable_data() { return s_->data; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }
  T item() const;

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    s_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }
  /// Gradient buffer; empty span until something has been accumulated.
  std::span<const T> grad() const { return s_->grad; }
  /// Gradient buffer, zero-allocated on first access. Gradient accumulation
  /// is the one mutation allowed through a const handle.
  std::span<T> grad_buffer() const;
  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), T(0)); }
  void release_grad() const { Buffer<T>().swap(s_->grad); }

  Tensor clone() const;
  bool shares_storage_with(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

/// Ordered record of executed differentiable operations.
///
/// Operations executed while a tape is active (see TapeScope) append a
/// backward rule when any input requires a gradient. backward() replays the
/// rules in reverse order, releasing each entry after it runs. One tape must
/// not be shared between threads.
template <typename T>
class GradTape {
 public:
  using Rule = std::function<void()>;

  void record(Rule rule) { rules_.push_back(std::move(rule)); }

  /// Seeds d(output)/d(output) = 1 for a single-element output and replays.
  void backward(Tensor<T> output);
  /// Seeds the output gradient with `seed` (same size as output) and replays.
  void backward(Tensor<T> output, std::span<const T> seed);

  std::size_t size() const { return rules_.size(); }
  void clear() { rules_.clear(); }

  /// Tape that operations on this thread currently record into, if any.
  static GradTape* active() { return active_; }

 private:
  template <typename>
  friend class TapeScope;
  template <typename>
  friend class NoGradScope;

  void replay();

  std::vector<Rule> rules_;
  static inline thread_local GradTape* active_ = nullptr;
};

/// Makes `tape` the active tape on this thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradTape<T>& tape) : previous_(GradTape<T>::active_) {
    GradTape<T>::active_ = &tape;
  }
  ~TapeScope() { GradTape<T>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<T>* previous_;
};

/// Suspends recording on this thread for the scope's lifetime.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(GradTape<T>::active_) { GradTape<T>::active_ = nullptr; }
  ~NoGradScope() { GradTape<T>::active_ = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape<T>* previous_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace vitforge

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sma/error.hpp"

namespace sma {

using Shape = std::vector<std::size_t>;

/// Allocator that default-initializes, so resizing a vector of doubles leaves
/// the new elements unset.
template <class T>
struct UninitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <class U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;
    } else {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
};

/// Tensor storage. Buffer(n) is uninitialized; Buffer(n, 0.0) is not.
using Buffer = std::vector<double, UninitAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode;

// Reads the gradient that reached an op's output (out.grad) and accumulates
// the corresponding contributions into the op's inputs.
using BackwardFn = std::function<void(const TensorNode& out)>;

struct TensorNode {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  bool recorded = false;
  BackwardFn backward;
  std::vector<std::shared_ptr<TensorNode>> inputs;

  /// Grad buffer, zero-filled on first access.
  Buffer& grad_buffer();
};

/// Dense row-major tensor handle. Copies share storage; values produced by
/// operations are never mutated after creation. Leaves (parameters) may be
/// updated in place through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }
  /// Element at a multi-index; bounds are checked.
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of differentiable operations on the current thread. Entries
/// are appended as ops execute, so the list is topologically sorted.
class Tape {
 public:
  static Tape& current();

  void record(const std::shared_ptr<TensorNode>& node);
  /// Walks the record in reverse from `loss`, then drops every entry.
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::shared_ptr<TensorNode>> entries_;
};

/// Populates d(loss)/d(leaf) on every requires_grad leaf reachable from `loss`.
/// Throws NumericError for a non-scalar loss or when the graph was already
/// consumed by a previous call.
void backward(const Tensor& loss);

/// Disables recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// While active, every op output is scanned for NaN/Inf.
class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool on = true);
  ~CheckedModeGuard();
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};

bool checked_mode();
void check_finite(std::span<const double> values, const char* op);

/// Builds an op output. When grad mode is on and any input requires a
/// gradient, the node is recorded on the current tape with `fn`.
Tensor make_result(Shape shape, Buffer value,
                   std::initializer_list<Tensor> inputs, BackwardFn fn,
                   const char* op);
Tensor make_result(Shape shape, Buffer value,
                   const std::vector<Tensor>& inputs, BackwardFn fn, const char* op);

}  // namespace sma

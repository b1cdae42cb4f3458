#include "sma/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sma {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_checked = false;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Buffer& TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(sma::numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (sma::numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value.assign(values.begin(), values.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("tensor: axis out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) throw NumericError("tensor: op outputs are immutable");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("tensor: item() on " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("tensor: index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw DimensionError("tensor: index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw NumericError("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  auto node = std::make_shared<TensorNode>();
  node->shape = shape();
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = requires_grad() && is_leaf();
  return t;
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const std::shared_ptr<TensorNode>& node) {
  node->recorded = true;
  entries_.push_back(node);
}

void Tape::clear() {
  for (auto& e : entries_) {
    e->backward = nullptr;
    e->inputs.clear();
    e->recorded = false;
  }
  entries_.clear();
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw NumericError("backward: loss must be a scalar");
  }
  const auto& root = loss.node();
  if (root->leaf) {
    if (root->requires_grad) root->grad_buffer()[0] += 1.0;
    return;
  }
  if (!root->recorded) {
    throw NumericError("backward: graph already consumed; run the forward pass again");
  }
  auto it = std::find(entries_.rbegin(), entries_.rend(), root);
  root->grad_buffer()[0] += 1.0;
  for (; it != entries_.rend(); ++it) {
    auto& node = *it;
    if (node->grad.empty() || !node->backward) continue;
    node->backward(*node);
  }
  clear();
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

CheckedModeGuard::CheckedModeGuard(bool on) : previous_(g_checked) { g_checked = on; }
CheckedModeGuard::~CheckedModeGuard() { g_checked = previous_; }
bool checked_mode() { return g_checked; }

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

namespace {

template <typename Range>
Tensor make_result_impl(Shape shape, Buffer value, const Range& inputs, BackwardFn fn,
                        const char* op) {
  if (g_checked) check_finite(value, op);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    node->backward = std::move(fn);
    for (const auto& t : inputs) {
      if (t.defined()) node->inputs.push_back(t.node());
    }
    Tape::current().record(node);
  }
  return Tensor(std::move(node));
}

}  // namespace

Tensor make_result(Shape shape, Buffer value, std::initializer_list<Tensor> inputs,
                   BackwardFn fn, const char* op) {
  return make_result_impl(std::move(shape), std::move(value), inputs, std::move(fn), op);
}

Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs,
                   BackwardFn fn, const char* op) {
  return make_result_impl(std::move(shape), std::move(value), inputs, std::move(fn), op);
}

}  // namespace sma

#include "gv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "gv/error.hpp"

namespace gv {
namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Precision parse_precision(const std::string& text) {
  if (text == "fp32" || text == "f32" || text == "float") return Precision::fp32;
  if (text == "fp64" || text == "f64" || text == "double") return Precision::fp64;
  throw ConfigError("unknown dtype '" + text + "' (expected fp32 or fp64)");
}

std::string to_string(Precision p) { return p == Precision::fp64 ? "fp64" : "fp32"; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() noexcept { return t_grad_enabled; }

template <class T>
void require_finite(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(what + ": non-finite value at element " + std::to_string(i));
    }
  }
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node>()) {
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::span<const T> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " elements, got " +
                         std::to_string(values.size()));
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->value.assign(values.begin(), values.end());
  return t;
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::initializer_list<T> values) {
  return from(std::move(shape), std::span<const T>(values.begin(), values.size()));
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, value);
}

template <class T>
Tensor<T> Tensor<T>::randn(Shape shape, std::mt19937_64& rng, T stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& x : t.node_->value) x = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Tensor<T> Tensor<T>::wrap(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <class T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

template <class T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

template <class T>
std::size_t Tensor<T>::numel() const {
  return shape_numel(shape());
}

template <class T>
std::span<T> Tensor<T>::values() {
  if (!node_) throw ContractError("use of an undefined tensor");
  return {node_->value.data(), node_->value.size()};
}

template <class T>
std::span<const T> Tensor<T>::values() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return {node_->value.data(), node_->value.size()};
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

template <class T>
T& Tensor<T>::at(std::size_t row, std::size_t col) {
  return node_->value[row * shape().back() + col];
}

template <class T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
  return node_->value[row * shape().back() + col];
}

template <class T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_) throw ContractError("use of an undefined tensor");
  if (!node_->leaf) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

template <class T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->value.size() && !node_->value.empty();
}

template <class T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) return {};
  return {node_->grad.data(), node_->grad.size()};
}

template <class T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) throw ContractError("use of an undefined tensor");
  auto& g = node_->ensure_grad();
  return {g.data(), g.size()};
}

template <class T>
void Tensor<T>::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
void Tensor<T>::backward() const {
  if (!node_) throw ContractError("backward() on an undefined tensor");
  if (shape_numel(node_->shape) != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_string(node_->shape));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a loss that is not connected to any tracked tensor");
  }

  // Iterative post-order DFS; reversed it is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), T(0));
  }
  node_->ensure_grad()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf) continue;
    if (n->backward) n->backward(*n);
    Buffer<T>().swap(n->grad);
  }
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), values());
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  auto t = from(shape(), values());
  t.node_->requires_grad = requires_grad();
  return t;
}

template class Tensor<float>;
template class Tensor<double>;
template void require_finite<float>(std::span<const float>, const std::string&);
template void require_finite<double>(std::span<const double>, const std::string&);

}  // namespace gv

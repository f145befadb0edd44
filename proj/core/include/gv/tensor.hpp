#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gv/meter.hpp"

namespace gv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Run-level numeric precision. Tensors are templated on the scalar type and
// the CLI dispatches a whole run to one instantiation.
enum class Precision : std::uint8_t { fp32 = 4, fp64 = 8 };

template <class T>
constexpr Precision precision_of();
template <>
constexpr Precision precision_of<float>() {
  return Precision::fp32;
}
template <>
constexpr Precision precision_of<double>() {
  return Precision::fp64;
}

Precision parse_precision(const std::string& text);
std::string to_string(Precision p);

// Calls fn.template operator()<T>() with T matching the precision.
template <class F>
decltype(auto) dispatch_precision(Precision p, F&& fn) {
  if (p == Precision::fp64) return fn.template operator()<double>();
  return fn.template operator()<float>();
}

// Autodiff graph node. Users interact with Tensor; ops build nodes.
template <class T>
struct TensorNode {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Reads this node's grad and accumulates into its inputs' grads.
  std::function<void(TensorNode&)> backward;

  Buffer<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Shared handle to a dense row-major array with optional gradient tracking.
// Copies alias the same storage, like framework tensors; use clone() for a
// deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));

  static Tensor from(Shape shape, std::span<const T> values);
  static Tensor from(Shape shape, std::initializer_list<T> values);
  static Tensor scalar(T value);
  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<T> values();
  std::span<const T> values() const;
  T item() const;
  T& at(std::size_t i) { return values()[i]; }
  T at(std::size_t i) const { return values()[i]; }
  T& at(std::size_t row, std::size_t col);
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  // Reverse-mode pass from a scalar. Leaf gradients accumulate across calls;
  // intermediate gradients are released once propagated.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  static Tensor wrap(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread while in scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Throws NumericError naming `what` if any element is NaN or infinite.
template <class T>
void require_finite(std::span<const T> values, const std::string& what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace gv

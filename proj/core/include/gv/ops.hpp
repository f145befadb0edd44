#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gv/tensor.hpp"

// Differentiable tensor operations. All inputs are row-major; "row" means
// the last axis. Broadcasting is limited to repeating a tensor whose shape is
// a suffix of the other operand's shape over the leading dimensions.
namespace gv {

using Index = std::uint32_t;

enum class Elementwise { add, mul };

// [m x k] x [k x n] -> [m x n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x[n x in] * w[in x out] + bias[out]; bias may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <class T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::add);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::mul);
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// Sum of all elements -> scalar.
template <class T>
Tensor<T> sum(const Tensor<T>& x);

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Mean over rows of -log softmax(logits)[target]. When valid_cols is
// non-empty, columns >= valid_cols[row] receive an additive -1e30 before the
// softmax (padding mask) and a target in that range is an IndexError.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const Index> targets,
                        std::span<const Index> valid_cols = {});

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Half-open range [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// out[i] = table[index[i]] for a 2-D table; embedding lookup.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const Index> index);

// out[i] = x[i] * scale[index[i]] + shift[index[i]], rows gathered without
// materialising the gathered tables.
template <class T>
Tensor<T> scale_shift_rows(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                           std::span<const Index> index);

template <class T>
Tensor<T> relu(const Tensor<T>& x);

// tanh approximation, as in GPT-2.
template <class T>
Tensor<T> gelu(const Tensor<T>& x);

// Row-wise layer normalisation with affine gamma/beta of the row length.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Fused causal multi-head self-attention. qkv is [batch*seq x 3d] holding
// the query, key and value projections side by side; returns [batch*seq x d].
template <class T>
Tensor<T> causal_attention(const Tensor<T>& qkv, std::size_t batch, std::size_t seq,
                           std::size_t heads);

}  // namespace gv

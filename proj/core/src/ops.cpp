#include "gv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gv/error.hpp"
#include "gv/kernels.hpp"

namespace gv {
namespace {

template <class T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Attaches a backward closure to `out` when recording is enabled and any of
// the inputs is tracked. The closure receives the output node.
template <class T, class Fn>
Tensor<T> record(Tensor<T> out, std::initializer_list<const Tensor<T>*> inputs, Fn&& fn) {
  if (!grad_enabled()) return out;
  bool tracked = false;
  for (const auto* in : inputs) tracked = tracked || (in->defined() && in->requires_grad());
  if (!tracked) return out;
  auto& node = *out.node();
  node.leaf = false;
  node.requires_grad = true;
  for (const auto* in : inputs) {
    if (in->defined() && in->requires_grad()) node.inputs.push_back(in->node());
  }
  node.backward = std::forward<Fn>(fn);
  return out;
}

// Gradient buffer of a tracked input, or nullptr when it needs none.
template <class T>
T* grad_ptr(const NodePtr<T>& n) {
  if (!n || !n->requires_grad) return nullptr;
  return n->ensure_grad().data();
}

template <class T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_string(t.shape()));
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

constexpr double kMaskLogit = -1e30;

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor<T> out({m, n});
  kernels::gemm_nn(a.values().data(), b.values().data(), out.values().data(), m, k, n, false);
  auto an = a.node(), bn = b.node();
  return record(std::move(out), {&a, &b}, [an, bn, m, k, n](TensorNode<T>& self) {
    const T* g = self.grad.data();
    if (T* ga = grad_ptr(an)) kernels::gemm_nt(g, bn->value.data(), ga, m, n, k, true);
    if (T* gb = grad_ptr(bn)) kernels::gemm_tn(an->value.data(), g, gb, m, k, n, true);
  });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  }
  if (bias.defined() && bias.numel() != n) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " for " +
                         std::to_string(n) + " outputs");
  }
  Tensor<T> out({m, n});
  T* o = out.values().data();
  kernels::gemm_nn(x.values().data(), w.values().data(), o, m, k, n, false);
  if (bias.defined()) {
    const T* bv = bias.values().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] += bv[j];
  }
  auto xn = x.node(), wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return record(std::move(out), {&x, &w, &bias}, [xn, wn, bn, m, k, n](TensorNode<T>& self) {
    const T* g = self.grad.data();
    if (T* gx = grad_ptr(xn)) kernels::gemm_nt(g, wn->value.data(), gx, m, n, k, true);
    if (T* gw = grad_ptr(wn)) kernels::gemm_tn(xn->value.data(), g, gw, m, k, n, true);
    if (T* gb = grad_ptr(bn)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

template <class T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind) {
  if (!is_suffix(b.shape(), a.shape())) {
    throw DimensionError("elementwise: cannot broadcast " + shape_string(b.shape()) + " onto " +
                         shape_string(a.shape()));
  }
  const std::size_t na = a.numel(), nb = b.numel();
  Tensor<T> out(a.shape());
  T* o = out.values().data();
  const T* av = a.values().data();
  const T* bv = b.values().data();
  if (nb > 0) {
    if (kind == Elementwise::add) {
      for (std::size_t i = 0; i < na; ++i) o[i] = av[i] + bv[i % nb];
    } else {
      for (std::size_t i = 0; i < na; ++i) o[i] = av[i] * bv[i % nb];
    }
  }
  auto an = a.node(), bn = b.node();
  return record(std::move(out), {&a, &b}, [an, bn, na, nb, kind](TensorNode<T>& self) {
    const T* g = self.grad.data();
    T* ga = grad_ptr(an);
    T* gb = grad_ptr(bn);
    if (kind == Elementwise::add) {
      if (ga)
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
      if (gb)
        for (std::size_t i = 0; i < na; ++i) gb[i % nb] += g[i];
    } else {
      const T* av = an->value.data();
      const T* bv = bn->value.data();
      if (ga)
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i] * bv[i % nb];
      if (gb)
        for (std::size_t i = 0; i < na; ++i) gb[i % nb] += g[i] * av[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * factor;
  auto xn = x.node();
  return record(std::move(out), {&x}, [xn, factor](TensorNode<T>& self) {
    T* gx = grad_ptr(xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * factor;
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (auto v : x.values()) total += v;
  auto xn = x.node();
  return record(Tensor<T>::scalar(total), {&x}, [xn](TensorNode<T>& self) {
    T* gx = grad_ptr(xn);
    const T g = self.grad[0];
    for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += g;
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(s));
  }
  const std::size_t n = s[axis];
  if (n == 0) throw DimensionError("softmax: empty axis in " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  Tensor<T> out(s);
  const T* xv = x.values().data();
  T* y = out.values().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) {
        y[base + j * inner] = static_cast<T>(y[base + j * inner] / total);
      }
    }
  }
  auto xn = x.node();
  return record(std::move(out), {&x}, [xn, outer, inner, n](TensorNode<T>& self) {
    T* gx = grad_ptr(xn);
    const T* y = self.value.data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const Index> targets,
                        std::span<const Index> valid_cols) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  if (!valid_cols.empty() && valid_cols.size() != rows) {
    throw DimensionError("cross_entropy: mask length differs from row count");
  }
  if (rows == 0) throw DimensionError("cross_entropy: empty batch");
  const T* x = logits.values().data();
  auto limit = [&](std::size_t r) -> std::size_t {
    return valid_cols.empty() ? n : std::min<std::size_t>(valid_cols[r], n);
  };

  Buffer<T> lse(rows);
  std::vector<T> work(n);
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t lim = limit(r);
    if (targets[r] >= lim) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " in row " +
                       std::to_string(r) + " outside [0, " + std::to_string(lim) + ")");
    }
    const T* row = x + r * n;
    for (std::size_t j = 0; j < n; ++j) work[j] = j < lim ? row[j] : row[j] + T(kMaskLogit);
    lse[r] = kernels::log_sum_exp<T>(work);
    total += lse[r] - row[targets[r]];
  }
  const T loss = total / static_cast<T>(rows);
  require_finite<T>(std::span<const T>(&loss, 1), "cross_entropy");

  auto ln = logits.node();
  std::vector<Index> tgt(targets.begin(), targets.end());
  std::vector<Index> lim_cols(valid_cols.begin(), valid_cols.end());
  return record(Tensor<T>::scalar(loss), {&logits},
                [ln, tgt = std::move(tgt), lim_cols = std::move(lim_cols), lse = std::move(lse),
                 rows, n](TensorNode<T>& self) {
                  T* gx = grad_ptr(ln);
                  const T* x = ln->value.data();
                  const T g = self.grad[0] / static_cast<T>(rows);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t lim =
                        lim_cols.empty() ? n : std::min<std::size_t>(lim_cols[r], n);
                    const T* row = x + r * n;
                    T* grow = gx + r * n;
                    for (std::size_t j = 0; j < n; ++j) {
                      const T z = j < lim ? row[j] : row[j] + T(kMaskLogit);
                      grow[j] += g * std::exp(z - lse[r]);
                    }
                    grow[tgt[r]] -= g;
                  }
                });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: part " + shape_string(s) + " incompatible with " +
                           shape_string(first) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_stride = out_shape[axis] * inner;

  Tensor<T> out(out_shape);
  T* o = out.values().data();
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.dim(axis) * inner;
    const T* pv = p.values().data();
    for (std::size_t k = 0; k < outer; ++k)
      std::copy(pv + k * block, pv + (k + 1) * block, o + k * out_stride + offset);
    offset += block;
  }

  if (!grad_enabled()) return out;
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.requires_grad();
  if (!tracked) return out;
  auto& node = *out.node();
  node.leaf = false;
  node.requires_grad = true;
  std::vector<NodePtr<T>> nodes;
  std::vector<std::size_t> blocks;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    blocks.push_back(p.dim(axis) * inner);
    if (p.requires_grad()) node.inputs.push_back(p.node());
  }
  node.backward = [nodes, blocks, offsets, outer, out_stride](TensorNode<T>& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      T* gp = grad_ptr(nodes[i]);
      if (!gp) continue;
      for (std::size_t k = 0; k < outer; ++k)
        for (std::size_t j = 0; j < blocks[i]; ++j)
          gp[k * blocks[i] + j] += self.grad[k * out_stride + offsets[i] + j];
    }
  };
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis out of range");
  if (begin > end || end > s[axis]) {
    throw IndexError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside axis of extent " + std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t in_stride = s[axis] * inner;
  const std::size_t block = (end - begin) * inner;
  const std::size_t offset = begin * inner;

  Tensor<T> out(out_shape);
  const T* xv = x.values().data();
  T* o = out.values().data();
  for (std::size_t k = 0; k < outer; ++k)
    std::copy(xv + k * in_stride + offset, xv + k * in_stride + offset + block, o + k * block);
  auto xn = x.node();
  return record(std::move(out), {&x},
                [xn, outer, in_stride, block, offset](TensorNode<T>& self) {
                  T* gx = grad_ptr(xn);
                  for (std::size_t k = 0; k < outer; ++k)
                    for (std::size_t j = 0; j < block; ++j)
                      gx[k * in_stride + offset + j] += self.grad[k * block + j];
                });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  auto out = Tensor<T>::from(std::move(shape), x.values());
  auto xn = x.node();
  return record(std::move(out), {&x}, [xn](TensorNode<T>& self) {
    T* gx = grad_ptr(xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const Index> index) {
  require_rank(table, 2, "gather_rows");
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  Tensor<T> out({index.size(), cols});
  const T* tv = table.values().data();
  T* o = out.values().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(index[i]) + " at position " +
                       std::to_string(i) + " outside table of " + std::to_string(rows) + " rows");
    }
    std::copy(tv + index[i] * cols, tv + (index[i] + 1) * cols, o + i * cols);
  }
  auto tn = table.node();
  std::vector<Index> idx(index.begin(), index.end());
  return record(std::move(out), {&table}, [tn, idx = std::move(idx), cols](TensorNode<T>& self) {
    T* gt = grad_ptr(tn);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j) gt[idx[i] * cols + j] += self.grad[i * cols + j];
  });
}

template <class T>
Tensor<T> scale_shift_rows(const Tensor<T>& x, const Tensor<T>& scale_table,
                           const Tensor<T>& shift_table, std::span<const Index> index) {
  require_rank(x, 2, "scale_shift_rows");
  require_rank(scale_table, 2, "scale_shift_rows");
  require_rank(shift_table, 2, "scale_shift_rows");
  const std::size_t n = x.dim(0), cols = x.dim(1), groups = scale_table.dim(0);
  if (scale_table.dim(1) != cols || shift_table.shape() != scale_table.shape()) {
    throw DimensionError("scale_shift_rows: tables " + shape_string(scale_table.shape()) + ", " +
                         shape_string(shift_table.shape()) + " for rows of width " +
                         std::to_string(cols));
  }
  if (index.size() != n) {
    throw DimensionError("scale_shift_rows: " + std::to_string(index.size()) +
                         " indices for " + std::to_string(n) + " rows");
  }
  Tensor<T> out({n, cols});
  const T* xv = x.values().data();
  const T* sc = scale_table.values().data();
  const T* sh = shift_table.values().data();
  T* o = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= groups) {
      throw IndexError("scale_shift_rows: group " + std::to_string(index[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(groups) + ")");
    }
    const T* srow = sc + index[i] * cols;
    const T* hrow = sh + index[i] * cols;
    for (std::size_t j = 0; j < cols; ++j) o[i * cols + j] = xv[i * cols + j] * srow[j] + hrow[j];
  }
  auto xn = x.node(), scn = scale_table.node(), shn = shift_table.node();
  std::vector<Index> idx(index.begin(), index.end());
  return record(std::move(out), {&x, &scale_table, &shift_table},
                [xn, scn, shn, idx = std::move(idx), cols](TensorNode<T>& self) {
                  const T* g = self.grad.data();
                  T* gx = grad_ptr(xn);
                  T* gsc = grad_ptr(scn);
                  T* gsh = grad_ptr(shn);
                  const T* xv = xn->value.data();
                  const T* sc = scn->value.data();
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    const std::size_t r = idx[i] * cols;
                    for (std::size_t j = 0; j < cols; ++j) {
                      const T gij = g[i * cols + j];
                      if (gx) gx[i * cols + j] += gij * sc[r + j];
                      if (gsc) gsc[r + j] += gij * xv[i * cols + j];
                      if (gsh) gsh[r + j] += gij;
                    }
                  }
                });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) o[i] = xv[i] > T(0) ? xv[i] : T(0);
  auto xn = x.node();
  return record(std::move(out), {&x}, [xn](TensorNode<T>& self) {
    T* gx = grad_ptr(xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn->value[i] > T(0)) gx[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    o[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  auto xn = x.node();
  return record(std::move(out), {&x}, [xn](TensorNode<T>& self) {
    T* gx = grad_ptr(xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = xn->value[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      const T dt = c * (T(1) + T(3) * a * v * v);
      gx[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dt);
    }
  });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: affine parameters do not match row width " +
                         std::to_string(n));
  }
  Tensor<T> out({rows, n});
  Buffer<T> mean(rows), rstd(rows);
  const T* xv = x.values().data();
  const T* gv = gamma.values().data();
  const T* bv = beta.values().data();
  T* o = out.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = (row[j] - mu) * rs * gv[j] + bv[j];
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return record(std::move(out), {&x, &gamma, &beta},
                [xn, gn, bn, mean = std::move(mean), rstd = std::move(rstd), rows,
                 n](TensorNode<T>& self) {
                  T* gx = grad_ptr(xn);
                  T* gg = grad_ptr(gn);
                  T* gb = grad_ptr(bn);
                  const T* xv = xn->value.data();
                  const T* gam = gn->value.data();
                  std::vector<T> dxhat(n);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const T* g = self.grad.data() + r * n;
                    const T* row = xv + r * n;
                    T sum_d = 0, sum_dx = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const T xhat = (row[j] - mean[r]) * rstd[r];
                      if (gg) gg[j] += g[j] * xhat;
                      if (gb) gb[j] += g[j];
                      dxhat[j] = g[j] * gam[j];
                      sum_d += dxhat[j];
                      sum_dx += dxhat[j] * xhat;
                    }
                    if (!gx) continue;
                    const T inv_n = T(1) / static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                      const T xhat = (row[j] - mean[r]) * rstd[r];
                      gx[r * n + j] +=
                          rstd[r] * (dxhat[j] - sum_d * inv_n - xhat * sum_dx * inv_n);
                    }
                  }
                });
}

template <class T>
Tensor<T> causal_attention(const Tensor<T>& qkv, std::size_t batch, std::size_t seq,
                           std::size_t heads) {
  require_rank(qkv, 2, "causal_attention");
  if (qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0) {
    throw DimensionError("causal_attention: qkv " + shape_string(qkv.shape()) +
                         " does not match batch " + std::to_string(batch) + " x seq " +
                         std::to_string(seq));
  }
  const std::size_t d = qkv.dim(1) / 3;
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const std::size_t row = 3 * d;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  Tensor<T> out({batch * seq, d});
  // Attention probabilities, [batch, heads, seq, seq], lower triangle used.
  Buffer<T> probs(batch * heads * seq * seq, T(0));
  const T* x = qkv.values().data();
  T* o = out.values().data();
  std::vector<T> kt(dh * seq);

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T* base = x + b * seq * row;
      for (std::size_t j = 0; j < seq; ++j)
        for (std::size_t c = 0; c < dh; ++c) kt[c * seq + j] = base[j * row + d + h * dh + c];
      T* p_bh = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* q = base + i * row + h * dh;
        T* p = p_bh + i * seq;
        const std::size_t len = i + 1;
        for (std::size_t c = 0; c < dh; ++c) {
          const T qc = q[c];
          const T* krow = kt.data() + c * seq;
          for (std::size_t j = 0; j < len; ++j) p[j] += qc * krow[j];
        }
        for (std::size_t j = 0; j < len; ++j) p[j] *= inv_sqrt;
        kernels::softmax_inplace(std::span<T>(p, len));
        T* orow = o + (b * seq + i) * d + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const T pj = p[j];
          const T* v = base + j * row + 2 * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += pj * v[c];
        }
      }
    }
  }

  auto xn = qkv.node();
  return record(
      std::move(out), {&qkv},
      [xn, probs = std::move(probs), batch, seq, heads, d, dh, row,
       inv_sqrt](TensorNode<T>& self) {
        T* gx = grad_ptr(xn);
        const T* x = xn->value.data();
        const T* go = self.grad.data();
        std::vector<T> vt(dh * seq), dp(seq), dq(dh), dk(seq * dh), dv(seq * dh);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* base = x + b * seq * row;
            T* gbase = gx + b * seq * row;
            for (std::size_t j = 0; j < seq; ++j)
              for (std::size_t c = 0; c < dh; ++c)
                vt[c * seq + j] = base[j * row + 2 * d + h * dh + c];
            std::fill(dk.begin(), dk.end(), T(0));
            std::fill(dv.begin(), dv.end(), T(0));
            const T* p_bh = probs.data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const std::size_t len = i + 1;
              const T* p = p_bh + i * seq;
              const T* g = go + (b * seq + i) * d + h * dh;
              // dP_ij = dO_i . v_j
              std::fill(dp.begin(), dp.begin() + len, T(0));
              for (std::size_t c = 0; c < dh; ++c) {
                const T gc = g[c];
                const T* vrow = vt.data() + c * seq;
                for (std::size_t j = 0; j < len; ++j) dp[j] += gc * vrow[j];
              }
              T dot = 0;
              for (std::size_t j = 0; j < len; ++j) dot += p[j] * dp[j];
              const T* q = base + i * row + h * dh;
              std::fill(dq.begin(), dq.end(), T(0));
              for (std::size_t j = 0; j < len; ++j) {
                const T ds = p[j] * (dp[j] - dot) * inv_sqrt;
                const T pj = p[j];
                const T* k = base + j * row + d + h * dh;
                T* dkj = dk.data() + j * dh;
                T* dvj = dv.data() + j * dh;
                for (std::size_t c = 0; c < dh; ++c) dq[c] += ds * k[c];
                for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * q[c];
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += pj * g[c];
              }
              T* gq = gbase + i * row + h * dh;
              for (std::size_t c = 0; c < dh; ++c) gq[c] += dq[c];
            }
            for (std::size_t j = 0; j < seq; ++j) {
              T* gk = gbase + j * row + d + h * dh;
              T* gv = gbase + j * row + 2 * d + h * dh;
              for (std::size_t c = 0; c < dh; ++c) gk[c] += dk[j * dh + c];
              for (std::size_t c = 0; c < dh; ++c) gv[c] += dv[j * dh + c];
            }
          }
        }
      });
}

#define GV_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> elementwise(const Tensor<T>&, const Tensor<T>&, Elementwise);            \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const Index>,                  \
                                   std::span<const Index>);                                   \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                      \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const Index>);                   \
  template Tensor<T> scale_shift_rows(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                      std::span<const Index>);                                \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> causal_attention(const Tensor<T>&, std::size_t, std::size_t, std::size_t);

GV_INSTANTIATE_OPS(float)
GV_INSTANTIATE_OPS(double)

}  // namespace gv

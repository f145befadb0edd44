#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <span>
#include <vector>

// Raw row-major loops shared by the autodiff ops and the inference paths.
// Every reduction runs with its reduction index ascending, so a result never
// depends on how the caller slices the work.
namespace gv::kernels {

namespace detail {

template <class T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(64)));
};
template <class T>
using Vec = typename VecOf<T>::type;

template <class T>
inline Vec<T> load(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <class T>
inline void store(T* p, const Vec<T>& v) {
  std::memcpy(p, &v, sizeof v);
}

// c[m x n] (+)= A * b[k x n] where A(i, q) = a[i * a_row + q * a_red].
// Blocks of kMr x kNr outputs stay in registers for the whole reduction,
// which runs over q ascending, so every output sees exactly the same
// additions in the same order as the plain triple loop.
template <class T>
void gemm_blocked(const T* a, std::size_t a_row, std::size_t a_red, const T* b, T* c,
                  std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  constexpr std::size_t kMr = 4;
  constexpr std::size_t kLanes = sizeof(Vec<T>) / sizeof(T);
  constexpr std::size_t kNr = 2 * kLanes;
  if (!accumulate) std::fill(c, c + m * n, T(0));
  const std::size_t m_main = m - m % kMr, n_main = n - n % kNr;
  // Column panels outermost so one kKc x kNr slice of b is reused by every
  // row block while it is still in cache. Splitting the reduction is exact:
  // the block reloads the partial sums from c and keeps adding in order.
  constexpr std::size_t kKc = 256;
  std::vector<T> panel(std::min(k, kKc) * kNr);
  for (std::size_t j = 0; j < n_main; j += kNr) {
    for (std::size_t q0 = 0; q0 < k; q0 += kKc) {
      const std::size_t q1 = std::min(k, q0 + kKc);
      // Contiguous copy of the panel avoids cache-set conflicts when n is a
      // large power of two.
      for (std::size_t q = q0; q < q1; ++q) {
        std::memcpy(panel.data() + (q - q0) * kNr, b + q * n + j, kNr * sizeof(T));
      }
      for (std::size_t i = 0; i < m_main; i += kMr) {
        Vec<T> acc[kMr][2];
        for (std::size_t r = 0; r < kMr; ++r) {
          acc[r][0] = load(c + (i + r) * n + j);
          acc[r][1] = load(c + (i + r) * n + j + kLanes);
        }
        const T* ap = a + i * a_row;
        const T* bp = panel.data();
        for (std::size_t q = q0; q < q1; ++q, bp += kNr) {
          const Vec<T> b0 = load(bp);
          const Vec<T> b1 = load(bp + kLanes);
          for (std::size_t r = 0; r < kMr; ++r) {
            const T av = ap[r * a_row + q * a_red];
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
          }
        }
        for (std::size_t r = 0; r < kMr; ++r) {
          store(c + (i + r) * n + j, acc[r][0]);
          store(c + (i + r) * n + j + kLanes, acc[r][1]);
        }
      }
    }
  }
  // Ragged right edge for the blocked rows, then the leftover rows in full.
  auto plain = [&](std::size_t row, std::size_t j0) {
    T* crow = c + row * n;
    for (std::size_t q = 0; q < k; ++q) {
      const T av = a[row * a_row + q * a_red];
      const T* brow = b + q * n;
      for (std::size_t x = j0; x < n; ++x) crow[x] += av * brow[x];
    }
  };
  if (n_main < n) {
    for (std::size_t i = 0; i < m_main; ++i) plain(i, n_main);
  }
  for (std::size_t i = m_main; i < m; ++i) plain(i, 0);
}

}  // namespace detail

// c[m x n] (+)= a[m x k] * b[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  detail::gemm_blocked(a, k, 1, b, c, m, k, n, accumulate);
}

// c[k x n] (+)= a[m x k]^T * b[m x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  detail::gemm_blocked(a, 1, k, b, c, k, m, n, accumulate);
}

template <class T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  // Tiled so that neither side walks a power-of-two stride across the whole
  // matrix.
  constexpr std::size_t kTile = 16;
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile) {
    const std::size_t i1 = std::min(rows, i0 + kTile);
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t j1 = std::min(cols, j0 + kTile);
      for (std::size_t j = j0; j < j1; ++j)
        for (std::size_t i = i0; i < i1; ++i) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

// c[m x n] (+)= a[m x k] * b[n x k]^T, via an explicit transpose of b so the
// inner loop stays contiguous.
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  std::vector<T> bt(k * n);
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

// In-place numerically stable softmax of one contiguous row.
template <class T>
void softmax_inplace(std::span<T> row) {
  T mx = row[0];
  for (auto x : row) mx = std::max(mx, x);
  // The normaliser is accumulated in double so fp32 rows of a few thousand
  // entries still sum to 1 within 1e-6.
  double sum = 0;
  for (auto& x : row) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : row) x = static_cast<T>(x / sum);
}

// log(sum(exp(row))) with max subtraction.
template <class T>
T log_sum_exp(std::span<const T> row) {
  T mx = row[0];
  for (auto x : row) mx = std::max(mx, x);
  double sum = 0;
  for (auto x : row) sum += std::exp(x - mx);
  return mx + static_cast<T>(std::log(sum));
}

}  // namespace gv::kernels

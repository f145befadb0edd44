#pragma once

#include <cstddef>
#include <vector>

#include "gv/tensor.hpp"

namespace gv {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
};

// Adam with bias correction and global-norm gradient clipping. Moment state
// is kept in double regardless of the parameter precision.
template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options);

  // Applies one update from the accumulated gradients. Returns the gradient
  // norm before clipping.
  double step();
  void zero_grad();

  std::size_t steps_taken() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return options_; }
  void set_lr(double lr) noexcept { options_.lr = lr; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace gv

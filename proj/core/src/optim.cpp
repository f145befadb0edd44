#include "gv/optim.hpp"

#include <cmath>

#include "gv/error.hpp"

namespace gv {

template <class T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw ContractError("Adam: parameter does not require grad");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

template <class T>
double Adam<T>::step() {
  double sq = 0;
  for (const auto& p : params_)
    for (auto g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("Adam: non-finite gradient norm");
  const double clip =
      (options_.clip_norm > 0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;

  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto grad = p.grad();
    if (grad.empty()) continue;
    auto w = p.values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = static_cast<double>(grad[j]) * clip;
      m[j] = b1 * m[j] + (1 - b1) * g;
      v[j] = b2 * v[j] + (1 - b2) * g * g;
      const double update = options_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
  return norm;
}

template <class T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace gv

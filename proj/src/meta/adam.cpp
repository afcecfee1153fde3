#include "kmaml/meta/adam.hpp"

#include <cmath>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

template <typename T>
void Adam<T>::update(TensorMap<T>& params, const TensorMap<T>& grads, double lr) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw DimensionError("adam: gradient for unknown parameter '" + name + "'");
    Tensor<T>& p = it->second;
    require_same_shape(p.shape(), g.shape(), "adam");
    auto [mi, m_new] = m_.try_emplace(name, Tensor<T>(p.shape()));
    auto [vi, v_new] = v_.try_emplace(name, Tensor<T>(p.shape()));
    Tensor<T>& m = mi->second;
    Tensor<T>& v = vi->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mn = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
      const double vn = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<T>(mn);
      v[i] = static_cast<T>(vn);
      const double step = lr * (mn / c1) / (std::sqrt(vn / c2) + eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step);
    }
    require_finite(p, "adam update of " + name);
  }
}

template <typename T>
void Adam<T>::restore(std::uint64_t step, TensorMap<T> m, TensorMap<T> v) {
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace kmaml

#pragma once

#include <cstdint>

#include "kmaml/numerics/tensor.hpp"

namespace kmaml {

/// Adam with bias correction. Moments are keyed by parameter name and are
/// created lazily on the first update of each entry.
template <typename T>
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Applies one step to every parameter that has a gradient.
  void update(TensorMap<T>& params, const TensorMap<T>& grads, double lr);

  std::uint64_t step() const { return step_; }
  const TensorMap<T>& first_moments() const { return m_; }
  const TensorMap<T>& second_moments() const { return v_; }
  void restore(std::uint64_t step, TensorMap<T> m, TensorMap<T> v);

 private:
  std::uint64_t step_ = 0;
  TensorMap<T> m_;
  TensorMap<T> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace kmaml

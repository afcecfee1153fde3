#include "kmaml/numerics/finite_difference.hpp"

#include <cmath>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

template <typename T>
TensorMap<T> finite_difference_grad(const std::function<T(const TensorMap<T>&)>& f, const TensorMap<T>& params, T h) {
  if (!(h > 0)) throw ParameterError("finite_difference_grad: step must be positive");
  TensorMap<T> work = params;
  TensorMap<T> grads;
  auto eval = [&](const std::string& name, std::size_t i) {
    const T value = f(work);
    if (!std::isfinite(value)) {
      throw NumericError("finite_difference_grad: non-finite evaluation at " + name + "[" + std::to_string(i) + "]");
    }
    return value;
  };
  for (auto& [name, tensor] : work) {
    Tensor<T> g(tensor.shape());
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      const T original = tensor[i];
      tensor[i] = original + h;
      const T plus = eval(name, i);
      tensor[i] = original - h;
      const T minus = eval(name, i);
      tensor[i] = original;
      g[i] = (plus - minus) / (2 * h);
    }
    grads.emplace(name, std::move(g));
  }
  return grads;
}

template TensorMap<float> finite_difference_grad(const std::function<float(const TensorMap<float>&)>&,
                                                 const TensorMap<float>&, float);
template TensorMap<double> finite_difference_grad(const std::function<double(const TensorMap<double>&)>&,
                                                  const TensorMap<double>&, double);

}  // namespace kmaml

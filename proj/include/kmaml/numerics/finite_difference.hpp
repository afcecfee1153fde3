#pragma once

#include <functional>

#include "kmaml/numerics/tensor.hpp"

namespace kmaml {

/// Central-difference gradient (f(p+h) - f(p-h)) / 2h of a scalar function,
/// one evaluation pair per scalar parameter. Throws NumericError when f is
/// non-finite and ParameterError when h <= 0.
template <typename T>
TensorMap<T> finite_difference_grad(const std::function<T(const TensorMap<T>&)>& f, const TensorMap<T>& params, T h);

}  // namespace kmaml

#pragma once

// Raw (non-differentiable) compute kernels over NCHW tensors.

#include <cstddef>

#include "kmaml/numerics/tensor.hpp"

namespace kmaml::kernels {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

std::size_t conv_output_size(std::size_t in, std::size_t kernel, const ConvGeometry& g);

/// x [N,Ci,H,W] * w [Co,Ci,k,k] -> [N,Co,Ho,Wo] (cross-correlation, no bias).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g);

/// Adjoint of conv2d with respect to its input; restores spatial size (in_h, in_w).
template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const ConvGeometry& g, std::size_t in_h,
                            std::size_t in_w);

/// Adjoint of conv2d with respect to its kernel (sum over the batch in sample order).
template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const ConvGeometry& g, std::size_t kernel);

/// Nearest-neighbour 2x upsampling of [N,C,H,W].
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x);

/// 2x2 block sum of [N,C,2H,2W]; adjoint of upsample2.
template <typename T>
Tensor<T> sum_pool2(const Tensor<T>& x);

/// a [m,k] . b [k,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

}  // namespace kmaml::kernels

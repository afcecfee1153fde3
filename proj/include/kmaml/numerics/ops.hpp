#pragma once

// Differentiable primitives. Each has a backward rule expressed through the
// other primitives in this file, so the set is closed under differentiation.

#include <cstddef>

#include "kmaml/numerics/autodiff.hpp"
#include "kmaml/numerics/kernels.hpp"

namespace kmaml::ad {

// Elementwise, equal shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
/// a * c for a constant tensor c of the same shape.
template <typename T> Var<T> mul_const(const Var<T>& a, const Tensor<T>& c);
/// a + c for a constant tensor c of the same shape.
template <typename T> Var<T> add_const(const Var<T>& a, const Tensor<T>& c);
template <typename T> Var<T> abs(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
/// x * s for a single-element s.
template <typename T> Var<T> scale_by(const Var<T>& x, const Var<T>& s);

// Reductions and their broadcasting adjoints.
template <typename T> Var<T> sum_all(const Var<T>& a);
template <typename T> Var<T> broadcast_scalar(const Var<T>& s, const Shape& shape);
/// [N,C,H,W] -> [C]
template <typename T> Var<T> channel_sum(const Var<T>& x);
/// [C] -> [N,C,H,W]
template <typename T> Var<T> broadcast_channels(const Var<T>& b, const Shape& shape);
/// [N,C,H,W] -> [N,C]
template <typename T> Var<T> sum_spatial(const Var<T>& x);
/// [N,C] -> [N,C,H,W]
template <typename T> Var<T> broadcast_spatial(const Var<T>& x, std::size_t h, std::size_t w);
/// [M,N] -> [N]
template <typename T> Var<T> sum_rows(const Var<T>& a);
/// [N] -> [M,N]
template <typename T> Var<T> broadcast_rows(const Var<T>& b, std::size_t rows);
/// [O,I,k,k] -> [O,I]
template <typename T> Var<T> sum_kernel(const Var<T>& x);
/// [O,I] -> [O,I,k,k]
template <typename T> Var<T> expand_kernel(const Var<T>& w, std::size_t k);

// Convolution family.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, const kernels::ConvGeometry& g);
template <typename T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, const kernels::ConvGeometry& g, std::size_t in_h,
                         std::size_t in_w);
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, const kernels::ConvGeometry& g, std::size_t k);
template <typename T> Var<T> upsample2(const Var<T>& x);
template <typename T> Var<T> sum_pool2(const Var<T>& x);

// Layout.
template <typename T> Var<T> reshape(const Var<T>& x, const Shape& shape);
/// Concatenate along axis 1 (channels for NCHW, columns for matrices).
template <typename T> Var<T> concat_dim1(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> slice_dim1(const Var<T>& x, std::size_t begin, std::size_t count);
/// Zero tensor with `total` entries on axis 1 and x placed at `begin`.
template <typename T> Var<T> embed_dim1(const Var<T>& x, std::size_t begin, std::size_t total);

// Linear algebra.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);

// Unitary DFT pair on [N,2,H,W].
template <typename T> Var<T> dft2(const Var<T>& x);
template <typename T> Var<T> idft2(const Var<T>& x);

/// Per-pixel magnitude of [N,2,H,W] -> [N,1,H,W]. Its backward treats the
/// phase factor as constant, so it is exact to first order only.
template <typename T> Var<T> complex_magnitude(const Var<T>& x);

// Composites.
template <typename T> Var<T> mean_all(const Var<T>& a);
template <typename T> Var<T> l1_loss(const Var<T>& pred, const Var<T>& target);
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b);
template <typename T> Var<T> mean_spatial(const Var<T>& x);
/// x [M,in] . W^T + b, with W [out,in] and b [out].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

}  // namespace kmaml::ad

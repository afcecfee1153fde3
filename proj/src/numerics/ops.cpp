#include "kmaml/numerics/ops.hpp"

#include <cmath>

#include "kmaml/numerics/errors.hpp"
#include "kmaml/numerics/fourier.hpp"

namespace kmaml::ad {

namespace {

template <typename T, typename F>
Tensor<T> map_values(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (std::size_t i = 0, n = a.numel(); i < n; ++i) po[i] = f(pa[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> zip_values(const Tensor<T>& a, const Tensor<T>& b, F f, const char* op) {
  require_same_shape(a.shape(), b.shape(), op);
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0, n = a.numel(); i < n; ++i) po[i] = f(pa[i], pb[i]);
  return out;
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_to_string(s));
  }
}

// Splits a shape into (outer, axis-1 extent, inner) for axis-1 layout ops.
struct Axis1Layout {
  std::size_t outer, extent, inner;
};

Axis1Layout axis1_layout(const Shape& s, const char* op) {
  if (s.size() < 2) throw DimensionError(std::string(op) + ": rank must be >= 2, got " + shape_to_string(s));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

template <typename T>
using Grads = std::vector<Var<T>>;

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return Var<T>::record(zip_values(a.value(), b.value(), [](T x, T y) { return x + y; }, "add"), "add", {a, b},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{g, g}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return Var<T>::record(zip_values(a.value(), b.value(), [](T x, T y) { return x - y; }, "sub"), "sub", {a, b},
                        [](const Var<T>& g, const std::vector<bool>& needs) {
                          return Grads<T>{g, needs[1] ? scale(g, T(-1)) : Var<T>{}};
                        });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return Var<T>::record(zip_values(a.value(), b.value(), [](T x, T y) { return x * y; }, "mul"), "mul", {a, b},
                        [a, b](const Var<T>& g, const std::vector<bool>& needs) {
                          return Grads<T>{needs[0] ? mul(g, b) : Var<T>{}, needs[1] ? mul(g, a) : Var<T>{}};
                        });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return Var<T>::record(map_values(a.value(), [factor](T x) { return x * factor; }), "scale", {a},
                        [factor](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{scale(g, factor)}; });
}

template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& c) {
  return Var<T>::record(zip_values(a.value(), c, [](T x, T y) { return x * y; }, "mul_const"), "mul_const", {a},
                        [c](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{mul_const(g, c)}; });
}

template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c) {
  return Var<T>::record(zip_values(a.value(), c, [](T x, T y) { return x + y; }, "add_const"), "add_const", {a},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{g}; });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  return Var<T>::record(map_values(a.value(), [](T x) { return std::abs(x); }), "abs", {a},
                        [a](const Var<T>& g, const std::vector<bool>&) {
                          Tensor<T> sign = map_values(a.value(), [](T x) { return T((x > 0) - (x < 0)); });
                          return Grads<T>{mul_const(g, sign)};
                        });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return Var<T>::record(map_values(a.value(), [](T x) { return x > 0 ? x : T(0); }), "relu", {a},
                        [a](const Var<T>& g, const std::vector<bool>&) {
                          Tensor<T> step = map_values(a.value(), [](T x) { return x > 0 ? T(1) : T(0); });
                          return Grads<T>{mul_const(g, step)};
                        });
}

template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
  if (s.value().numel() != 1) throw DimensionError("scale_by: factor must be a single element, got " +
                                                   shape_to_string(s.shape()));
  const T f = s.value()[0];
  return Var<T>::record(map_values(x.value(), [f](T v) { return v * f; }), "scale_by", {x, s},
                        [x, s](const Var<T>& g, const std::vector<bool>& needs) {
                          return Grads<T>{needs[0] ? scale_by(g, s) : Var<T>{},
                                          needs[1] ? reshape(sum_all(mul(g, x)), s.shape()) : Var<T>{}};
                        });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  const Shape shape = a.shape();
  return Var<T>::record(Tensor<T>::scalar(total), "sum_all", {a}, [shape](const Var<T>& g, const std::vector<bool>&) {
    return Grads<T>{broadcast_scalar(g, shape)};
  });
}

template <typename T>
Var<T> broadcast_scalar(const Var<T>& s, const Shape& shape) {
  if (s.value().numel() != 1) throw DimensionError("broadcast_scalar: source must be a single element");
  return Var<T>::record(Tensor<T>(shape, s.value()[0]), "broadcast_scalar", {s},
                        [shape = s.shape()](const Var<T>& g, const std::vector<bool>&) {
                          return Grads<T>{reshape(sum_all(g), shape)};
                        });
}

template <typename T>
Var<T> channel_sum(const Var<T>& x) {
  require_rank(x.shape(), 4, "channel_sum");
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor<T> out(Shape{c});
  const T* p = x.value().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = 0;
      const T* plane = p + (s * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
      out[ch] += acc;
    }
  return Var<T>::record(std::move(out), "channel_sum", {x}, [shape = x.shape()](const Var<T>& g, const std::vector<bool>&) {
    return Grads<T>{broadcast_channels(g, shape)};
  });
}

template <typename T>
Var<T> broadcast_channels(const Var<T>& b, const Shape& shape) {
  require_rank(shape, 4, "broadcast_channels");
  if (b.shape() != Shape{shape[1]}) {
    throw DimensionError("broadcast_channels: bias " + shape_to_string(b.shape()) + " vs target " +
                         shape_to_string(shape));
  }
  const std::size_t n = shape[0], c = shape[1], hw = shape[2] * shape[3];
  Tensor<T> out(shape);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) std::fill_n(out.data() + (s * c + ch) * hw, hw, b.value()[ch]);
  return Var<T>::record(std::move(out), "broadcast_channels", {b},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{channel_sum(g)}; });
}

template <typename T>
Var<T> sum_spatial(const Var<T>& x) {
  require_rank(x.shape(), 4, "sum_spatial");
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor<T> out(Shape{n, c});
  const T* p = x.value().data();
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < h * w; ++j) acc += p[i * h * w + j];
    out[i] = acc;
  }
  return Var<T>::record(std::move(out), "sum_spatial", {x}, [h, w](const Var<T>& g, const std::vector<bool>&) {
    return Grads<T>{broadcast_spatial(g, h, w)};
  });
}

template <typename T>
Var<T> broadcast_spatial(const Var<T>& x, std::size_t h, std::size_t w) {
  require_rank(x.shape(), 2, "broadcast_spatial");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  Tensor<T> out(Shape{n, c, h, w});
  for (std::size_t i = 0; i < n * c; ++i) std::fill_n(out.data() + i * h * w, h * w, x.value()[i]);
  return Var<T>::record(std::move(out), "broadcast_spatial", {x},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{sum_spatial(g)}; });
}

template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  require_rank(a.shape(), 2, "sum_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out(Shape{n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.value()[i * n + j];
  return Var<T>::record(std::move(out), "sum_rows", {a},
                        [m](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{broadcast_rows(g, m)}; });
}

template <typename T>
Var<T> broadcast_rows(const Var<T>& b, std::size_t rows) {
  require_rank(b.shape(), 1, "broadcast_rows");
  const std::size_t n = b.shape()[0];
  Tensor<T> out(Shape{rows, n});
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(b.value().data(), n, out.data() + i * n);
  return Var<T>::record(std::move(out), "broadcast_rows", {b},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{sum_rows(g)}; });
}

template <typename T>
Var<T> sum_kernel(const Var<T>& x) {
  require_rank(x.shape(), 4, "sum_kernel");
  const std::size_t o = x.shape()[0], i = x.shape()[1], kk = x.shape()[2] * x.shape()[3];
  const std::size_t k = x.shape()[2];
  Tensor<T> out(Shape{o, i});
  for (std::size_t p = 0; p < o * i; ++p) {
    T acc = 0;
    for (std::size_t j = 0; j < kk; ++j) acc += x.value()[p * kk + j];
    out[p] = acc;
  }
  return Var<T>::record(std::move(out), "sum_kernel", {x},
                        [k](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{expand_kernel(g, k)}; });
}

template <typename T>
Var<T> expand_kernel(const Var<T>& w, std::size_t k) {
  require_rank(w.shape(), 2, "expand_kernel");
  const std::size_t o = w.shape()[0], i = w.shape()[1];
  Tensor<T> out(Shape{o, i, k, k});
  for (std::size_t p = 0; p < o * i; ++p) std::fill_n(out.data() + p * k * k, k * k, w.value()[p]);
  return Var<T>::record(std::move(out), "expand_kernel", {w},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{sum_kernel(g)}; });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const kernels::ConvGeometry& geo) {
  const std::size_t h = x.shape().at(2), wd = x.shape().at(3), k = w.shape().at(2);
  return Var<T>::record(kernels::conv2d(x.value(), w.value(), geo), "conv2d", {x, w},
                        [x, w, geo, h, wd, k](const Var<T>& g, const std::vector<bool>& needs) {
                          return Grads<T>{needs[0] ? conv2d_input_grad(g, w, geo, h, wd) : Var<T>{},
                                          needs[1] ? conv2d_weight_grad(x, g, geo, k) : Var<T>{}};
                        });
}

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, const kernels::ConvGeometry& geo, std::size_t in_h,
                         std::size_t in_w) {
  const std::size_t k = w.shape().at(2);
  return Var<T>::record(kernels::conv2d_input_grad(gy.value(), w.value(), geo, in_h, in_w), "conv2d_input_grad",
                        {gy, w}, [gy, w, geo, k](const Var<T>& g, const std::vector<bool>& needs) {
                          return Grads<T>{needs[0] ? conv2d(g, w, geo) : Var<T>{},
                                          needs[1] ? conv2d_weight_grad(g, gy, geo, k) : Var<T>{}};
                        });
}

template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, const kernels::ConvGeometry& geo, std::size_t k) {
  const std::size_t h = x.shape().at(2), wd = x.shape().at(3);
  return Var<T>::record(kernels::conv2d_weight_grad(x.value(), gy.value(), geo, k), "conv2d_weight_grad", {x, gy},
                        [x, gy, geo, h, wd](const Var<T>& g, const std::vector<bool>& needs) {
                          return Grads<T>{needs[0] ? conv2d_input_grad(gy, g, geo, h, wd) : Var<T>{},
                                          needs[1] ? conv2d(x, g, geo) : Var<T>{}};
                        });
}

template <typename T>
Var<T> upsample2(const Var<T>& x) {
  return Var<T>::record(kernels::upsample2(x.value()), "upsample2", {x},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{sum_pool2(g)}; });
}

template <typename T>
Var<T> sum_pool2(const Var<T>& x) {
  return Var<T>::record(kernels::sum_pool2(x.value()), "sum_pool2", {x},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{upsample2(g)}; });
}

template <typename T>
Var<T> reshape(const Var<T>& x, const Shape& shape) {
  return Var<T>::record(x.value().reshaped(shape), "reshape", {x},
                        [orig = x.shape()](const Var<T>& g, const std::vector<bool>&) {
                          return Grads<T>{reshape(g, orig)};
                        });
}

template <typename T>
Var<T> concat_dim1(const Var<T>& a, const Var<T>& b) {
  const auto la = axis1_layout(a.shape(), "concat_dim1");
  const auto lb = axis1_layout(b.shape(), "concat_dim1");
  Shape sa = a.shape(), sb = b.shape();
  sa[1] = sb[1] = 0;
  if (sa != sb) {
    throw DimensionError("concat_dim1: operands " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) +
                         " differ outside axis 1");
  }
  Shape out_shape = a.shape();
  out_shape[1] = la.extent + lb.extent;
  Tensor<T> out(out_shape);
  const std::size_t block_a = la.extent * la.inner, block_b = lb.extent * lb.inner;
  for (std::size_t o = 0; o < la.outer; ++o) {
    T* dst = out.data() + o * (block_a + block_b);
    std::copy_n(a.value().data() + o * block_a, block_a, dst);
    std::copy_n(b.value().data() + o * block_b, block_b, dst + block_a);
  }
  const std::size_t ca = la.extent, cb = lb.extent;
  return Var<T>::record(std::move(out), "concat_dim1", {a, b},
                        [ca, cb](const Var<T>& g, const std::vector<bool>& needs) {
                          return Grads<T>{needs[0] ? slice_dim1(g, 0, ca) : Var<T>{},
                                          needs[1] ? slice_dim1(g, ca, cb) : Var<T>{}};
                        });
}

template <typename T>
Var<T> slice_dim1(const Var<T>& x, std::size_t begin, std::size_t count) {
  const auto l = axis1_layout(x.shape(), "slice_dim1");
  if (count == 0 || begin + count > l.extent) {
    throw DimensionError("slice_dim1: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[1] = count;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::copy_n(x.value().data() + (o * l.extent + begin) * l.inner, count * l.inner,
                out.data() + o * count * l.inner);
  }
  const std::size_t total = l.extent;
  return Var<T>::record(std::move(out), "slice_dim1", {x},
                        [begin, total](const Var<T>& g, const std::vector<bool>&) {
                          return Grads<T>{embed_dim1(g, begin, total)};
                        });
}

template <typename T>
Var<T> embed_dim1(const Var<T>& x, std::size_t begin, std::size_t total) {
  const auto l = axis1_layout(x.shape(), "embed_dim1");
  if (begin + l.extent > total) {
    throw DimensionError("embed_dim1: " + shape_to_string(x.shape()) + " does not fit at " + std::to_string(begin) +
                         " within " + std::to_string(total));
  }
  Shape out_shape = x.shape();
  out_shape[1] = total;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::copy_n(x.value().data() + o * l.extent * l.inner, l.extent * l.inner,
                out.data() + (o * total + begin) * l.inner);
  }
  const std::size_t count = l.extent;
  return Var<T>::record(std::move(out), "embed_dim1", {x}, [begin, count](const Var<T>& g, const std::vector<bool>&) {
    return Grads<T>{slice_dim1(g, begin, count)};
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return Var<T>::record(kernels::matmul(a.value(), b.value()), "matmul", {a, b},
                        [a, b](const Var<T>& g, const std::vector<bool>& needs) {
                          return Grads<T>{needs[0] ? matmul(g, transpose(b)) : Var<T>{},
                                          needs[1] ? matmul(transpose(a), g) : Var<T>{}};
                        });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  return Var<T>::record(kernels::transpose(a.value()), "transpose", {a},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{transpose(g)}; });
}

template <typename T>
Var<T> dft2(const Var<T>& x) {
  return Var<T>::record(kernels::dft2(x.value()), "dft2", {x},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{idft2(g)}; });
}

template <typename T>
Var<T> idft2(const Var<T>& x) {
  return Var<T>::record(kernels::idft2(x.value()), "idft2", {x},
                        [](const Var<T>& g, const std::vector<bool>&) { return Grads<T>{dft2(g)}; });
}

template <typename T>
Var<T> complex_magnitude(const Var<T>& x) {
  if (x.shape().size() != 4 || x.shape()[1] != 2) {
    throw DimensionError("complex_magnitude: expected [N,2,H,W], got " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.shape()[0], hw = x.shape()[2] * x.shape()[3];
  Tensor<T> mag(Shape{n, 1, x.shape()[2], x.shape()[3]});
  Tensor<T> phase(x.shape());
  const T* p = x.value().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < hw; ++i) {
      const T re = p[(2 * s) * hw + i], im = p[(2 * s + 1) * hw + i];
      const T m = std::sqrt(re * re + im * im);
      mag[s * hw + i] = m;
      if (m > 0) {
        phase[(2 * s) * hw + i] = re / m;
        phase[(2 * s + 1) * hw + i] = im / m;
      }
    }
  }
  return Var<T>::record(std::move(mag), "complex_magnitude", {x},
                        [phase = std::move(phase)](const Var<T>& g, const std::vector<bool>&) {
                          return Grads<T>{mul_const(concat_dim1(g, g), phase)};
                        });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.value().numel()));
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
  return mean_all(abs(sub(pred, target)));
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
  return add(x, broadcast_channels(b, x.shape()));
}

template <typename T>
Var<T> mean_spatial(const Var<T>& x) {
  require_rank(x.shape(), 4, "mean_spatial");
  return scale(sum_spatial(x), T(1) / static_cast<T>(x.shape()[2] * x.shape()[3]));
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add(matmul(x, transpose(w)), broadcast_rows(b, x.shape().at(0)));
}

#define KMAML_INSTANTIATE_OPS(T)                                                                                 \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> scale(const Var<T>&, T);                                                                       \
  template Var<T> mul_const(const Var<T>&, const Tensor<T>&);                                                    \
  template Var<T> add_const(const Var<T>&, const Tensor<T>&);                                                    \
  template Var<T> abs(const Var<T>&);                                                                            \
  template Var<T> relu(const Var<T>&);                                                                           \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> sum_all(const Var<T>&);                                                                        \
  template Var<T> broadcast_scalar(const Var<T>&, const Shape&);                                                 \
  template Var<T> channel_sum(const Var<T>&);                                                                    \
  template Var<T> broadcast_channels(const Var<T>&, const Shape&);                                               \
  template Var<T> sum_spatial(const Var<T>&);                                                                    \
  template Var<T> broadcast_spatial(const Var<T>&, std::size_t, std::size_t);                                    \
  template Var<T> sum_rows(const Var<T>&);                                                                       \
  template Var<T> broadcast_rows(const Var<T>&, std::size_t);                                                    \
  template Var<T> sum_kernel(const Var<T>&);                                                                     \
  template Var<T> expand_kernel(const Var<T>&, std::size_t);                                                     \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const kernels::ConvGeometry&);                            \
  template Var<T> conv2d_input_grad(const Var<T>&, const Var<T>&, const kernels::ConvGeometry&, std::size_t,    \
                                    std::size_t);                                                                \
  template Var<T> conv2d_weight_grad(const Var<T>&, const Var<T>&, const kernels::ConvGeometry&, std::size_t);  \
  template Var<T> upsample2(const Var<T>&);                                                                      \
  template Var<T> sum_pool2(const Var<T>&);                                                                      \
  template Var<T> reshape(const Var<T>&, const Shape&);                                                          \
  template Var<T> concat_dim1(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> slice_dim1(const Var<T>&, std::size_t, std::size_t);                                           \
  template Var<T> embed_dim1(const Var<T>&, std::size_t, std::size_t);                                           \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> transpose(const Var<T>&);                                                                      \
  template Var<T> dft2(const Var<T>&);                                                                           \
  template Var<T> idft2(const Var<T>&);                                                                          \
  template Var<T> complex_magnitude(const Var<T>&);                                                              \
  template Var<T> mean_all(const Var<T>&);                                                                       \
  template Var<T> l1_loss(const Var<T>&, const Var<T>&);                                                         \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                                \
  template Var<T> mean_spatial(const Var<T>&);                                                                   \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);

KMAML_INSTANTIATE_OPS(float)
KMAML_INSTANTIATE_OPS(double)

}  // namespace kmaml::ad

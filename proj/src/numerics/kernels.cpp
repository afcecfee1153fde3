#include "kmaml/numerics/kernels.hpp"

#include <Eigen/Core>
#include <vector>

#include "kmaml/numerics/errors.hpp"

namespace kmaml::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* operand) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": operand '" + operand + "' must have rank " + std::to_string(rank) +
                         ", got " + shape_to_string(s));
  }
}

// cols[(c*k + ky)*k + kx][oy*wo + ox] = x[c][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, const ConvGeometry& g,
            std::size_t ho, std::size_t wo, T* cols) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * stride - pad + static_cast<std::ptrdiff_t>(ky);
          T* out = row + oy * wo;
          if (y < 0 || y >= ih) {
            std::fill(out, out + wo, T(0));
            continue;
          }
          const T* src = plane + y * iw;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox) * stride - pad + static_cast<std::ptrdiff_t>(kx);
            out[ox] = (xx < 0 || xx >= iw) ? T(0) : src[xx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, const ConvGeometry& g,
            std::size_t ho, std::size_t wo, T* x) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(w);
  std::fill(x, x + channels * h * w, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = x + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * stride - pad + static_cast<std::ptrdiff_t>(ky);
          if (y < 0 || y >= ih) continue;
          T* dst = plane + y * iw;
          const T* in = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox) * stride - pad + static_cast<std::ptrdiff_t>(kx);
            if (xx >= 0 && xx < iw) dst[xx] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  if (g.stride == 0) throw ParameterError("convolution stride must be positive");
  if (in + 2 * g.pad < kernel) {
    throw DimensionError("convolution kernel " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(in + 2 * g.pad));
  }
  return (in + 2 * g.pad - kernel) / g.stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g) {
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(w.shape(), 4, "conv2d", "kernel");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != k) {
    throw DimensionError("conv2d: kernel " + shape_to_string(w.shape()) + " incompatible with input " +
                         shape_to_string(x.shape()));
  }
  const std::size_t ho = conv_output_size(h, k, g), wo = conv_output_size(wd, k, g);
  const std::size_t patch = ci * k * k, npos = ho * wo;
  Tensor<T> y(Shape{n, co, ho, wo});
  std::vector<T> cols(patch * npos);
  ConstMapMat<T> wm(w.data(), static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(patch));
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.data() + s * ci * h * wd, ci, h, wd, k, g, ho, wo, cols.data());
    ConstMapMat<T> cm(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(npos));
    MapMat<T> ym(y.data() + s * co * npos, static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(npos));
    ym.noalias() = wm * cm;
  }
  return y;
}

template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const ConvGeometry& g, std::size_t in_h,
                            std::size_t in_w) {
  require_rank(gy.shape(), 4, "conv2d_input_grad", "output gradient");
  require_rank(w.shape(), 4, "conv2d_input_grad", "kernel");
  const std::size_t n = gy.dim(0), co = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3);
  const std::size_t ci = w.dim(1), k = w.dim(2);
  if (w.dim(0) != co || conv_output_size(in_h, k, g) != ho || conv_output_size(in_w, k, g) != wo) {
    throw DimensionError("conv2d_input_grad: gradient " + shape_to_string(gy.shape()) + " incompatible with kernel " +
                         shape_to_string(w.shape()));
  }
  const std::size_t patch = ci * k * k, npos = ho * wo;
  Tensor<T> gx(Shape{n, ci, in_h, in_w});
  std::vector<T> cols(patch * npos);
  ConstMapMat<T> wm(w.data(), static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(patch));
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat<T> gm(gy.data() + s * co * npos, static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(npos));
    MapMat<T> cm(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(npos));
    cm.noalias() = wm.transpose() * gm;
    col2im(cols.data(), ci, in_h, in_w, k, g, ho, wo, gx.data() + s * ci * in_h * in_w);
  }
  return gx;
}

template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const ConvGeometry& g, std::size_t kernel) {
  require_rank(x.shape(), 4, "conv2d_weight_grad", "input");
  require_rank(gy.shape(), 4, "conv2d_weight_grad", "output gradient");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3);
  if (gy.dim(0) != n || conv_output_size(h, kernel, g) != ho || conv_output_size(wd, kernel, g) != wo) {
    throw DimensionError("conv2d_weight_grad: input " + shape_to_string(x.shape()) + " incompatible with gradient " +
                         shape_to_string(gy.shape()));
  }
  const std::size_t patch = ci * kernel * kernel, npos = ho * wo;
  Tensor<T> gw(Shape{co, ci, kernel, kernel});
  std::vector<T> cols(patch * npos);
  MapMat<T> gwm(gw.data(), static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(patch));
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.data() + s * ci * h * wd, ci, h, wd, kernel, g, ho, wo, cols.data());
    ConstMapMat<T> cm(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(npos));
    ConstMapMat<T> gm(gy.data() + s * co * npos, static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(npos));
    gwm.noalias() += gm * cm.transpose();
  }
  return gw;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "upsample2", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y(Shape{n, c, 2 * h, 2 * w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * 4 * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      const T* srow = src + (i / 2) * w;
      T* drow = dst + i * 2 * w;
      for (std::size_t j = 0; j < 2 * w; ++j) drow[j] = srow[j / 2];
    }
  }
  return y;
}

template <typename T>
Tensor<T> sum_pool2(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "sum_pool2", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h2 = x.dim(2), w2 = x.dim(3);
  if (h2 % 2 || w2 % 2) throw DimensionError("sum_pool2: spatial size must be even, got " + shape_to_string(x.shape()));
  const std::size_t h = h2 / 2, w = w2 / 2;
  Tensor<T> y(Shape{n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.data() + p * h2 * w2;
    T* dst = y.data() + p * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const T* a = src + (2 * i) * w2 + 2 * j;
        dst[i * w + j] = (a[0] + a[1]) + (a[w2] + a[w2 + 1]);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul", "lhs");
  require_rank(b.shape(), 2, "matmul", "rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: lhs " + shape_to_string(a.shape()) + " incompatible with rhs " +
                         shape_to_string(b.shape()));
  }
  Tensor<T> c(Shape{a.dim(0), b.dim(1)});
  ConstMapMat<T> am(a.data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
  ConstMapMat<T> bm(b.data(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));
  MapMat<T> cm(c.data(), static_cast<Eigen::Index>(c.dim(0)), static_cast<Eigen::Index>(c.dim(1)));
  cm.noalias() = am * bm;
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "transpose", "input");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

#define KMAML_INSTANTIATE_KERNELS(T)                                                                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);                            \
  template Tensor<T> conv2d_input_grad(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&, std::size_t,    \
                                       std::size_t);                                                             \
  template Tensor<T> conv2d_weight_grad(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&, std::size_t);  \
  template Tensor<T> upsample2(const Tensor<T>&);                                                                \
  template Tensor<T> sum_pool2(const Tensor<T>&);                                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> transpose(const Tensor<T>&);

KMAML_INSTANTIATE_KERNELS(float)
KMAML_INSTANTIATE_KERNELS(double)

}  // namespace kmaml::kernels

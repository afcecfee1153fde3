#include "kmaml/numerics/fourier.hpp"

#include <Eigen/Core>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// cos/sin tables of exp(-2*pi*i*j*k/n)/sqrt(n); symmetric in (j, k).
template <typename T>
struct Twiddle {
  RowMat<T> cos;
  RowMat<T> sin;
};

template <typename T>
std::shared_ptr<const Twiddle<T>> twiddle(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const Twiddle<T>>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto tw = std::make_shared<Twiddle<T>>();
  const auto en = static_cast<Eigen::Index>(n);
  tw->cos.resize(en, en);
  tw->sin.resize(en, en);
  const long double scale = 1.0L / std::sqrt(static_cast<long double>(n));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t m = (j * k) % n;
      const long double angle = 2.0L * std::numbers::pi_v<long double> * static_cast<long double>(m) /
                                static_cast<long double>(n);
      tw->cos(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = static_cast<T>(std::cos(angle) * scale);
      tw->sin(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = static_cast<T>(std::sin(angle) * scale);
    }
  }
  cache.emplace(n, tw);
  return tw;
}

template <typename T>
Tensor<T> transform(const Tensor<T>& x, bool inverse) {
  if (x.rank() != 4 || x.dim(1) != 2) {
    throw DimensionError(std::string(inverse ? "idft2" : "dft2") + ": expected [N,2,H,W], got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const auto th = twiddle<T>(h);
  const auto tw = twiddle<T>(w);
  const auto eh = static_cast<Eigen::Index>(h), ew = static_cast<Eigen::Index>(w);
  // exp(-i.) for the forward direction, exp(+i.) for the inverse.
  const T sgn = inverse ? T(-1) : T(1);
  Tensor<T> y(x.shape());
  RowMat<T> zr(eh, ew), zi(eh, ew);
  for (std::size_t s = 0; s < n; ++s) {
    Eigen::Map<const RowMat<T>> xr(x.data() + (2 * s) * h * w, eh, ew);
    Eigen::Map<const RowMat<T>> xi(x.data() + (2 * s + 1) * h * w, eh, ew);
    Eigen::Map<RowMat<T>> yr(y.data() + (2 * s) * h * w, eh, ew);
    Eigen::Map<RowMat<T>> yi(y.data() + (2 * s + 1) * h * w, eh, ew);
    zr.noalias() = xr * tw->cos;
    zr.noalias() += sgn * (xi * tw->sin);
    zi.noalias() = xi * tw->cos;
    zi.noalias() -= sgn * (xr * tw->sin);
    yr.noalias() = th->cos * zr;
    yr.noalias() += sgn * (th->sin * zi);
    yi.noalias() = th->cos * zi;
    yi.noalias() -= sgn * (th->sin * zr);
  }
  return y;
}

}  // namespace

namespace kernels {

template <typename T>
Tensor<T> dft2(const Tensor<T>& x) {
  return transform(x, false);
}

template <typename T>
Tensor<T> idft2(const Tensor<T>& x) {
  return transform(x, true);
}

template Tensor<float> dft2(const Tensor<float>&);
template Tensor<double> dft2(const Tensor<double>&);
template Tensor<float> idft2(const Tensor<float>&);
template Tensor<double> idft2(const Tensor<double>&);

}  // namespace kernels

template <typename Domain>
std::vector<double> ComplexGrid<Domain>::magnitude() const {
  std::vector<double> m(size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::sqrt(real[i] * real[i] + imag[i] * imag[i]);
  return m;
}

template <typename T, typename Domain>
Tensor<T> to_tensor(const ComplexGrid<Domain>& g) {
  if (g.height == 0 || g.width == 0) throw DimensionError("to_tensor: empty raster");
  Tensor<T> t(Shape{1, 2, g.height, g.width});
  const std::size_t plane = g.size();
  for (std::size_t i = 0; i < plane; ++i) {
    t[i] = static_cast<T>(g.real[i]);
    t[plane + i] = static_cast<T>(g.imag[i]);
  }
  return t;
}

template <typename Domain, typename T>
ComplexGrid<Domain> from_tensor(const Tensor<T>& t, std::size_t index) {
  if (t.rank() != 4 || t.dim(1) != 2 || index >= t.dim(0)) {
    throw DimensionError("from_tensor: expected [N,2,H,W] with sample " + std::to_string(index) + ", got " +
                         shape_to_string(t.shape()));
  }
  ComplexGrid<Domain> g(t.dim(2), t.dim(3));
  const std::size_t plane = g.size();
  const T* base = t.data() + index * 2 * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    g.real[i] = static_cast<double>(base[i]);
    g.imag[i] = static_cast<double>(base[plane + i]);
  }
  return g;
}

KSpace dft2(const ComplexImage& x) { return from_tensor<FrequencyDomain>(kernels::dft2(to_tensor<double>(x))); }

ComplexImage idft2(const KSpace& k) { return from_tensor<ImageDomain>(kernels::idft2(to_tensor<double>(k))); }

template struct ComplexGrid<ImageDomain>;
template struct ComplexGrid<FrequencyDomain>;
template Tensor<float> to_tensor<float>(const ComplexImage&);
template Tensor<double> to_tensor<double>(const ComplexImage&);
template Tensor<float> to_tensor<float>(const KSpace&);
template Tensor<double> to_tensor<double>(const KSpace&);
template ComplexImage from_tensor<ImageDomain>(const Tensor<float>&, std::size_t);
template ComplexImage from_tensor<ImageDomain>(const Tensor<double>&, std::size_t);
template KSpace from_tensor<FrequencyDomain>(const Tensor<float>&, std::size_t);
template KSpace from_tensor<FrequencyDomain>(const Tensor<double>&, std::size_t);

}  // namespace kmaml

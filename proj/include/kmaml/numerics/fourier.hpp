#pragma once

// Unitary 2-D discrete Fourier transform. Complex rasters are carried as two
// real channels (real, imaginary); both directions scale by 1/sqrt(H*W).

#include <cstddef>
#include <vector>

#include "kmaml/numerics/tensor.hpp"

namespace kmaml {

struct ImageDomain {};
struct FrequencyDomain {};

/// Complex raster in row-major order. The tag keeps image-space and
/// k-space values from being mixed up.
template <typename Domain>
struct ComplexGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> real;
  std::vector<double> imag;

  ComplexGrid() = default;
  ComplexGrid(std::size_t h, std::size_t w) : height(h), width(w), real(h * w, 0.0), imag(h * w, 0.0) {}

  std::size_t size() const { return height * width; }
  std::vector<double> magnitude() const;
  bool operator==(const ComplexGrid&) const = default;
};

using ComplexImage = ComplexGrid<ImageDomain>;
using KSpace = ComplexGrid<FrequencyDomain>;

KSpace dft2(const ComplexImage& x);
ComplexImage idft2(const KSpace& k);

/// Packs a grid into a [1,2,H,W] tensor.
template <typename T, typename Domain>
Tensor<T> to_tensor(const ComplexGrid<Domain>& g);

/// Unpacks sample `index` of a [N,2,H,W] tensor.
template <typename Domain, typename T>
ComplexGrid<Domain> from_tensor(const Tensor<T>& t, std::size_t index = 0);

namespace kernels {

/// Forward unitary DFT over the last two axes of [N,2,H,W].
template <typename T>
Tensor<T> dft2(const Tensor<T>& x);

/// Inverse unitary DFT over the last two axes of [N,2,H,W].
template <typename T>
Tensor<T> idft2(const Tensor<T>& x);

}  // namespace kernels

}  // namespace kmaml

#pragma once

// Binary k-space sampling masks. `kept` is stored in natural DFT order:
// index (0,0) is the zero frequency, so it lines up with dft2 output.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace kmaml {

enum class MaskType { cartesian, gaussian };

std::string to_string(MaskType type);
/// Accepts "cartesian" / "gaussian"; throws ParameterError otherwise.
MaskType parse_mask_type(const std::string& text);

struct MaskSpec {
  MaskType type = MaskType::cartesian;
  double acceleration = 4.0;
  double center_fraction = 0.08;
};

struct SamplingMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> kept;
  MaskType mask_type = MaskType::cartesian;
  double acceleration = 1.0;
  double center_fraction = 0.0;
  std::uint64_t seed = 0;

  bool at(std::size_t row, std::size_t col) const { return kept[row * width + col] != 0; }
  std::size_t kept_count() const;
  /// Total points over kept points.
  double realized_acceleration() const;
};

/// Signed frequency of DFT index i on an axis of length n, in [-n/2, n/2).
long signed_frequency(std::size_t i, std::size_t n);

/// Keeps whole columns: the floor(cf*w) lowest-frequency columns plus
/// uniformly drawn extra columns up to round(w/acceleration).
SamplingMask generate_cartesian_mask(std::size_t h, std::size_t w, double acceleration, double center_fraction,
                                     std::uint64_t seed);

/// Keeps a centre disc of radius floor(cf*min(h,w)/2), then draws further
/// points without replacement with weight exp(-d^2 / 2 sigma^2),
/// sigma = min(h,w)/6, until round(h*w/acceleration) points are kept.
SamplingMask generate_gaussian_mask(std::size_t h, std::size_t w, double acceleration, double center_fraction,
                                    std::uint64_t seed);

SamplingMask generate_mask(std::size_t h, std::size_t w, const MaskSpec& spec, std::uint64_t seed);

/// Mask from an explicit grid (natural DFT order), e.g. for tests.
SamplingMask mask_from_grid(std::size_t h, std::size_t w, std::vector<std::uint8_t> kept);

}  // namespace kmaml

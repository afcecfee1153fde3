#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "kmaml/numerics/fourier.hpp"

namespace kmaml {

/// Contrast tag to remap id: T1 -> 0, FLAIR -> 1, T2 -> 2, PD -> 3. A plain
/// non-negative integer is accepted as an id directly.
int contrast_id(const std::string& tag);

/// Overlapping-ellipse phantom. The geometry depends only on `seed`; the
/// contrast id selects a monotone intensity remap on the object support.
/// Real-valued, magnitude in [0,1].
ComplexImage generate_phantom(std::uint64_t seed, int contrast, std::size_t h, std::size_t w);

}  // namespace kmaml

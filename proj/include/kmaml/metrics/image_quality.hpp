#pragma once

#include <cstddef>
#include <optional>
#include <span>

namespace kmaml {

inline constexpr double kPsnrCap = 100.0;

/// 20 log10(max(target) / rmse) on magnitudes; kPsnrCap when the images are
/// identical (and as an upper bound otherwise).
double psnr(std::span<const double> pred, std::span<const double> target);

/// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5),
/// K1 = 0.01, K2 = 0.03. The dynamic range defaults to max(target).
double ssim(std::span<const double> pred, std::span<const double> target, std::size_t height, std::size_t width,
            std::optional<double> range = std::nullopt);

}  // namespace kmaml

#pragma once

// Raster ingestion and export. KMR1 layout: "KMR1", u32 height, u32 width,
// u32 channels (1 or 2), then f32 values row-major per channel, all
// little-endian.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "kmaml/numerics/fourier.hpp"
#include "kmaml/tasks/mask.hpp"

namespace kmaml {

struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;
};

Raster read_kmr1(const std::filesystem::path& path);
void write_kmr1(const std::filesystem::path& path, const Raster& raster);

/// Reads an 8- or 16-bit grayscale PNG as a single channel in [0,1].
Raster read_png(const std::filesystem::path& path);
/// Writes a grayscale PNG of bit depth 8 or 16, clamping values to [0,1].
void write_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<double>& values, int bit_depth = 8);

/// Loads a PNG or KMR1 file (by magic bytes) and scales it so the largest
/// magnitude is 1.
ComplexImage load_image(const std::filesystem::path& path);
/// Stores one channel when the imaginary part is all zero, two otherwise.
void save_image(const std::filesystem::path& path, const ComplexImage& image);

void save_mask(const std::filesystem::path& path, const SamplingMask& mask);

}  // namespace kmaml

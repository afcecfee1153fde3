#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kmaml/numerics/fourier.hpp"
#include "kmaml/tasks/mask.hpp"

namespace kmaml {

struct Sample {
  ComplexImage x_us;
  KSpace y;
  SamplingMask mask;
  ComplexImage x_fs;
  std::size_t image_index = 0;
};

struct Task {
  std::string id;
  std::string contrast;
  MaskSpec mask_spec;
  std::vector<Sample> support;
  std::vector<Sample> query;
};

struct Undersampled {
  ComplexImage x_us;
  KSpace y;
};

/// y = mask * (dft2(x) + noise), x_us = idft2(y). Noise is complex Gaussian
/// with per-component standard deviation `noise_sigma`.
Undersampled undersample(const ComplexImage& x_fs, const SamplingMask& mask, double noise_sigma = 0.0,
                         std::uint64_t noise_seed = 0);

/// Task id of the form "<contrast>-<c|g><acceleration>", e.g. "T1-c4".
std::string task_id(const std::string& contrast, const MaskSpec& spec);

/// Shuffles the images with `seed`, puts round(n*split_ratio) in the support
/// set and the rest in the query set, and undersamples each with its own
/// mask realization.
Task build_task(std::span<const ComplexImage> images, const std::string& contrast, const MaskSpec& spec,
                double split_ratio, std::uint64_t seed, double noise_sigma = 0.0);

/// Deterministic 64-bit mixing of a seed with a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace kmaml

#include "kmaml/tasks/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Undersampled undersample(const ComplexImage& x_fs, const SamplingMask& mask, double noise_sigma,
                         std::uint64_t noise_seed) {
  if (x_fs.height != mask.height || x_fs.width != mask.width) {
    throw DimensionError("undersample: image " + std::to_string(x_fs.height) + "x" + std::to_string(x_fs.width) +
                         " does not match mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width));
  }
  if (!(noise_sigma >= 0.0)) throw ParameterError("undersample: noise sigma must be >= 0");
  KSpace y = dft2(x_fs);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (mask.kept[i]) {
      if (noise_sigma > 0.0) {
        y.real[i] += normal(rng);
        y.imag[i] += normal(rng);
      }
    } else {
      y.real[i] = 0.0;
      y.imag[i] = 0.0;
    }
  }
  ComplexImage x_us = idft2(y);
  return {std::move(x_us), std::move(y)};
}

std::string task_id(const std::string& contrast, const MaskSpec& spec) {
  std::ostringstream os;
  os << contrast << '-' << (spec.type == MaskType::cartesian ? 'c' : 'g') << spec.acceleration;
  return os.str();
}

Task build_task(std::span<const ComplexImage> images, const std::string& contrast, const MaskSpec& spec,
                double split_ratio, std::uint64_t seed, double noise_sigma) {
  if (images.size() < 2) throw ParameterError("build_task: at least 2 images are required");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ParameterError("build_task: split_ratio must lie in (0,1)");
  const std::size_t n = images.size();
  const auto n_support = static_cast<std::size_t>(std::llround(static_cast<double>(n) * split_ratio));
  if (n_support < 1 || n_support >= n) {
    throw ParameterError("build_task: split of " + std::to_string(n) + " images at ratio " +
                         std::to_string(split_ratio) + " leaves an empty partition");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::shuffle(order.begin(), order.end(), rng);

  Task task;
  task.id = task_id(contrast, spec);
  task.contrast = contrast;
  task.mask_spec = spec;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = order[k];
    const ComplexImage& x = images[idx];
    Sample s;
    s.mask = generate_mask(x.height, x.width, spec, derive_seed(seed, 1 + 2 * idx));
    auto us = undersample(x, s.mask, noise_sigma, derive_seed(seed, 2 + 2 * idx));
    s.x_us = std::move(us.x_us);
    s.y = std::move(us.y);
    s.x_fs = x;
    s.image_index = idx;
    (k < n_support ? task.support : task.query).push_back(std::move(s));
  }
  return task;
}

}  // namespace kmaml

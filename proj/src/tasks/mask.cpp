#include "kmaml/tasks/mask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <utility>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

namespace {

void check_common(std::size_t h, std::size_t w, double acceleration, double center_fraction) {
  if (h == 0 || w == 0) throw ParameterError("mask: height and width must be positive");
  if (!(acceleration >= 1.0) || !std::isfinite(acceleration)) {
    throw ParameterError("mask: acceleration must be >= 1, got " + std::to_string(acceleration));
  }
  if (!(center_fraction >= 0.0) || center_fraction > 1.0 / acceleration + 1e-12) {
    throw ParameterError("mask: center_fraction must lie in [0, 1/acceleration], got " +
                         std::to_string(center_fraction));
  }
}

// floor() that tolerates products such as 0.29*100 = 28.999999999999996.
std::size_t floor_count(double v) { return static_cast<std::size_t>(std::floor(v + 1e-9)); }

std::size_t natural_index(long f, std::size_t n) {
  const long nn = static_cast<long>(n);
  return static_cast<std::size_t>(((f % nn) + nn) % nn);
}

}  // namespace

std::string to_string(MaskType type) { return type == MaskType::cartesian ? "cartesian" : "gaussian"; }

MaskType parse_mask_type(const std::string& text) {
  if (text == "cartesian") return MaskType::cartesian;
  if (text == "gaussian") return MaskType::gaussian;
  throw ParameterError("unknown mask type '" + text + "' (expected cartesian or gaussian)");
}

std::size_t SamplingMask::kept_count() const {
  return static_cast<std::size_t>(std::count_if(kept.begin(), kept.end(), [](std::uint8_t v) { return v != 0; }));
}

double SamplingMask::realized_acceleration() const {
  const std::size_t k = kept_count();
  return k == 0 ? std::numeric_limits<double>::infinity() : static_cast<double>(kept.size()) / static_cast<double>(k);
}

long signed_frequency(std::size_t i, std::size_t n) {
  const long li = static_cast<long>(i);
  const long ln = static_cast<long>(n);
  return li < (ln + 1) / 2 ? li : li - ln;
}

SamplingMask generate_cartesian_mask(std::size_t h, std::size_t w, double acceleration, double center_fraction,
                                     std::uint64_t seed) {
  check_common(h, w, acceleration, center_fraction);
  const auto required = static_cast<std::size_t>(std::llround(static_cast<double>(w) / acceleration));
  const std::size_t center = floor_count(center_fraction * static_cast<double>(w));
  if (required < center || required == 0) {
    throw ParameterError("cartesian mask: " + std::to_string(required) + " required lines but " +
                         std::to_string(center) + " centre lines");
  }

  std::vector<std::uint8_t> cols(w, 0);
  // Centre block in shifted coordinates [w/2 - center/2, w/2 - center/2 + center).
  const long first = -static_cast<long>(center / 2);
  for (std::size_t j = 0; j < center; ++j) cols[natural_index(first + static_cast<long>(j), w)] = 1;

  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < w; ++j) {
    if (!cols[j]) candidates.push_back(j);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  for (std::size_t j = 0; j < required - center; ++j) cols[candidates[j]] = 1;

  SamplingMask m;
  m.height = h;
  m.width = w;
  m.kept.assign(h * w, 0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) m.kept[r * w + c] = cols[c];
  }
  m.mask_type = MaskType::cartesian;
  m.acceleration = acceleration;
  m.center_fraction = center_fraction;
  m.seed = seed;
  return m;
}

SamplingMask generate_gaussian_mask(std::size_t h, std::size_t w, double acceleration, double center_fraction,
                                    std::uint64_t seed) {
  check_common(h, w, acceleration, center_fraction);
  const std::size_t total = h * w;
  const auto required = static_cast<std::size_t>(std::llround(static_cast<double>(total) / acceleration));
  const double min_side = static_cast<double>(std::min(h, w));
  const double radius = static_cast<double>(floor_count(center_fraction * min_side / 2.0));
  const double sigma = min_side / 6.0;

  SamplingMask m;
  m.height = h;
  m.width = w;
  m.kept.assign(total, 0);
  m.mask_type = MaskType::gaussian;
  m.acceleration = acceleration;
  m.center_fraction = center_fraction;
  m.seed = seed;

  std::vector<double> dist2(total);
  std::size_t in_disc = 0;
  for (std::size_t r = 0; r < h; ++r) {
    const double fy = static_cast<double>(signed_frequency(r, h));
    for (std::size_t c = 0; c < w; ++c) {
      const double fx = static_cast<double>(signed_frequency(c, w));
      const double d2 = fy * fy + fx * fx;
      dist2[r * w + c] = d2;
      if (d2 <= radius * radius) {
        m.kept[r * w + c] = 1;
        ++in_disc;
      }
    }
  }
  if (required < in_disc || required == 0) {
    throw ParameterError("gaussian mask: " + std::to_string(required) + " required points but centre disc holds " +
                         std::to_string(in_disc));
  }

  // Weighted sampling without replacement: keep the largest keys log(u)/weight.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(total - in_disc);
  for (std::size_t i = 0; i < total; ++i) {
    const double u = 1.0 - unit(rng);  // (0, 1]
    if (m.kept[i]) continue;
    const double weight = std::exp(-dist2[i] / (2.0 * sigma * sigma));
    keys.emplace_back(std::log(u) / weight, i);
  }
  const std::size_t extra = required - in_disc;
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(extra), keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  for (std::size_t i = 0; i < extra; ++i) m.kept[keys[i].second] = 1;
  return m;
}

SamplingMask generate_mask(std::size_t h, std::size_t w, const MaskSpec& spec, std::uint64_t seed) {
  return spec.type == MaskType::cartesian ? generate_cartesian_mask(h, w, spec.acceleration, spec.center_fraction, seed)
                                          : generate_gaussian_mask(h, w, spec.acceleration, spec.center_fraction, seed);
}

SamplingMask mask_from_grid(std::size_t h, std::size_t w, std::vector<std::uint8_t> kept) {
  if (kept.size() != h * w) throw DimensionError("mask_from_grid: grid size does not match height*width");
  SamplingMask m;
  m.height = h;
  m.width = w;
  m.kept = std::move(kept);
  const std::size_t k = m.kept_count();
  m.acceleration = k == 0 ? 0.0 : static_cast<double>(h * w) / static_cast<double>(k);
  return m;
}

}  // namespace kmaml

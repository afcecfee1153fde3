#include "kmaml/tasks/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

namespace {

struct Ellipse {
  double cx, cy, a, b, angle, intensity;

  bool contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = (c * dx + s * dy) / a;
    const double v = (-s * dx + c * dy) / b;
    return u * u + v * v <= 1.0;
  }
};

double remap(double v, int contrast) {
  switch (contrast) {
    case 0: return v;
    case 1: return 0.2 + 0.8 * (1.0 - v);
    case 2: return std::sqrt(v);
    case 3: return v * v;
    default: return std::pow(v, 0.5 + 0.5 * contrast);
  }
}

}  // namespace

int contrast_id(const std::string& tag) {
  if (tag == "T1") return 0;
  if (tag == "FLAIR") return 1;
  if (tag == "T2") return 2;
  if (tag == "PD") return 3;
  if (!tag.empty() && std::all_of(tag.begin(), tag.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) &&
      tag.size() < 6) {
    return std::stoi(tag);
  }
  throw ParameterError("unknown contrast tag '" + tag + "' (expected T1, FLAIR, T2, PD or an integer id)");
}

ComplexImage generate_phantom(std::uint64_t seed, int contrast, std::size_t h, std::size_t w) {
  if (h < 16 || w < 16) throw ParameterError("generate_phantom: height and width must be >= 16");
  if (contrast < 0) throw ParameterError("generate_phantom: contrast id must be non-negative");

  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  std::vector<Ellipse> shapes;
  const int count = std::uniform_int_distribution<int>(5, 9)(rng);
  shapes.push_back({uniform(-0.05, 0.05), uniform(-0.05, 0.05), uniform(0.72, 0.9), uniform(0.8, 0.95),
                    uniform(-0.2, 0.2), uniform(0.2, 0.35)});
  for (int i = 1; i < count; ++i) {
    const double r = uniform(0.0, 0.5);
    const double t = uniform(0.0, 2.0 * std::numbers::pi);
    shapes.push_back({r * std::cos(t), r * std::sin(t), uniform(0.08, 0.35), uniform(0.08, 0.35),
                      uniform(0.0, std::numbers::pi), uniform(0.1, 0.5)});
  }

  std::vector<double> v(h * w, 0.0);
  double peak = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(h) * 2.0 - 1.0;
    for (std::size_t c = 0; c < w; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(w) * 2.0 - 1.0;
      if (!shapes[0].contains(x, y)) continue;
      double sum = 0.0;
      for (const auto& e : shapes) {
        if (e.contains(x, y)) sum += e.intensity;
      }
      v[r * w + c] = sum;
      peak = std::max(peak, sum);
    }
  }

  ComplexImage img(h, w);
  double out_peak = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] <= 0.0) continue;
    img.real[i] = remap(v[i] / peak, contrast);
    out_peak = std::max(out_peak, img.real[i]);
  }
  for (auto& x : img.real) x /= out_peak;
  return img;
}

}  // namespace kmaml

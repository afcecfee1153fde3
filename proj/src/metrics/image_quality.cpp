#include "kmaml/metrics/image_quality.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;

void require_same_size(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size() || a.empty()) {
    throw DimensionError(std::string(op) + ": sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
}

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-mode separable filtering: rows first, then columns.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& g) {
  const std::size_t ow = w - kWindow + 1;
  const std::size_t oh = h - kWindow + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * img[r * w + c + k];
      rows[r * ow + c] = s;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * rows[(r + k) * ow + c];
      out[r * ow + c] = s;
    }
  }
  return out;
}

}  // namespace

double psnr(std::span<const double> pred, std::span<const double> target) {
  require_same_size(pred, target, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - target[i]) * (pred[i] - target[i]);
  mse /= static_cast<double>(pred.size());
  if (mse == 0.0) return kPsnrCap;
  const double peak = *std::max_element(target.begin(), target.end());
  if (!(peak > 0.0)) throw NumericError("psnr: target maximum must be positive");
  return std::min(kPsnrCap, 20.0 * std::log10(peak / std::sqrt(mse)));
}

double ssim(std::span<const double> pred, std::span<const double> target, std::size_t height, std::size_t width,
            std::optional<double> range) {
  require_same_size(pred, target, "ssim");
  if (pred.size() != height * width) throw DimensionError("ssim: size does not match height*width");
  if (height < kWindow || width < kWindow) {
    throw DimensionError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is smaller than the 11x11 window");
  }
  const double L = range ? *range : *std::max_element(target.begin(), target.end());
  if (!(L > 0.0)) throw NumericError("ssim: dynamic range must be positive");
  const double c1 = (0.01 * L) * (0.01 * L);
  const double c2 = (0.03 * L) * (0.03 * L);

  const auto g = gaussian_taps();
  const std::size_t n = pred.size();
  std::vector<double> x(pred.begin(), pred.end()), y(target.begin(), target.end());
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, height, width, g);
  const auto my = filter_valid(y, height, width, g);
  const auto sxx = filter_valid(xx, height, width, g);
  const auto syy = filter_valid(yy, height, width, g);
  const auto sxy = filter_valid(xy, height, width, g);

  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace kmaml

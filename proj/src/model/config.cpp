#include "kmaml/model/config.hpp"

#include <algorithm>
#include <cmath>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

namespace {
// The context encoder always downsamples three times.
constexpr std::size_t kContextStages = 3;
}  // namespace

std::string to_string(Modulation m) {
  switch (m) {
    case Modulation::none: return "none";
    case Modulation::kernel: return "kernel";
    case Modulation::scalar: return "scalar";
  }
  return "unknown";
}

std::vector<LayerSpec> base_layers(const BaseNetConfig& cfg) {
  std::vector<LayerSpec> layers;
  const std::size_t L = cfg.levels;
  for (std::size_t i = 0; i < L; ++i) {
    layers.push_back({"conv_down_" + std::to_string(i), LayerKind::down, i == 0 ? cfg.io_channels : cfg.channels[i - 1],
                      cfg.channels[i], i == 0 ? 1u : 2u, true, 0});
  }
  layers.push_back({"latent_layer", LayerKind::bottleneck, cfg.channels[L - 1], cfg.bottleneck, 2, true, 0});
  std::size_t below = cfg.bottleneck;
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t skip = L - 1 - j;
    const bool last = j + 1 == L;
    const std::size_t out = last ? cfg.io_channels : cfg.channels[skip];
    layers.push_back({"conv_up_" + std::to_string(j), LayerKind::up, below + cfg.channels[skip], out, 1, !last, skip});
    below = out;
  }
  return layers;
}

void validate(const ModelConfig& cfg) {
  const auto& b = cfg.base;
  if (b.levels < 1) throw ParameterError("levels must be >= 1");
  if (b.channels.size() != b.levels) {
    throw ParameterError("channels must list " + std::to_string(b.levels) + " values, got " +
                         std::to_string(b.channels.size()));
  }
  if (std::any_of(b.channels.begin(), b.channels.end(), [](std::size_t c) { return c == 0; }) || b.bottleneck == 0) {
    throw ParameterError("channel counts must be positive");
  }
  if (b.kernel_size == 0 || b.kernel_size % 2 == 0) throw ParameterError("kernel_size must be odd");
  if (b.io_channels != 2) throw ParameterError("io_channels must be 2 (real, imaginary)");
  if (cfg.hyper.embed_dim == 0) throw ParameterError("embed_dim must be positive");
  if (cfg.hyper.hidden == 0) throw ParameterError("hyper_hidden must be positive");
  if (cfg.hyper.rank == 0) throw ParameterError("rank must be positive");
  if (cfg.hyper.context_channels.size() != 2 || cfg.hyper.context_channels[0] == 0 ||
      cfg.hyper.context_channels[1] == 0) {
    throw ParameterError("context_channels must list 2 positive values");
  }
  if (!(cfg.aux_weight >= 0.0) || !std::isfinite(cfg.aux_weight)) throw ParameterError("aux_weight must be >= 0");
  if (!(cfg.dc_lambda > 0.0)) throw ParameterError("dc_lambda must be > 0");
}

void require_input_size(const ModelConfig& cfg, std::size_t h, std::size_t w) {
  std::size_t depth = cfg.base.levels;
  if (cfg.modulation != Modulation::none) depth = std::max(depth, kContextStages);
  const std::size_t unit = std::size_t{1} << depth;
  if (h % unit != 0 || w % unit != 0 || h == 0 || w == 0) {
    throw DimensionError("input " + std::to_string(h) + "x" + std::to_string(w) + " must be divisible by " +
                         std::to_string(unit));
  }
}

}  // namespace kmaml

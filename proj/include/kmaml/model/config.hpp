#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace kmaml {

struct BaseNetConfig {
  std::size_t levels = 3;
  /// Output channels of the encoder levels; the bottleneck follows.
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t bottleneck = 64;
  std::size_t kernel_size = 3;
  std::size_t io_channels = 2;
  bool residual = true;
};

struct HyperNetConfig {
  std::size_t embed_dim = 256;
  std::size_t hidden = 64;
  std::size_t rank = 1;
  /// Widths of the first two context-encoder stages; the decoder mirrors
  /// them back to two channels.
  std::vector<std::size_t> context_channels{8, 16};
};

/// How the base network is conditioned on the context embedding.
enum class Modulation {
  none,    // plain base network
  kernel,  // per-kernel low-rank modulation from hypernetworks
  scalar,  // one scalar per layer scaling that layer's activations
};

std::string to_string(Modulation m);

struct ModelConfig {
  BaseNetConfig base;
  HyperNetConfig hyper;
  Modulation modulation = Modulation::kernel;
  /// Weight of the context autoencoder's L1 reconstruction loss.
  double aux_weight = 0.1;
  /// Data-fidelity weight; infinity means hard replacement.
  double dc_lambda = std::numeric_limits<double>::infinity();
};

enum class LayerKind { down, bottleneck, up };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::down;
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::size_t stride = 1;
  bool relu = true;
  /// For up layers: index of the encoder layer whose output is concatenated.
  std::size_t skip_from = 0;
};

/// Weighted layers in forward order: encoder levels, bottleneck, decoder.
std::vector<LayerSpec> base_layers(const BaseNetConfig& cfg);

/// Throws ParameterError on an inconsistent configuration.
void validate(const ModelConfig& cfg);

/// Throws DimensionError unless an h x w input fits the down-sampling depth.
void require_input_size(const ModelConfig& cfg, std::size_t h, std::size_t w);

}  // namespace kmaml

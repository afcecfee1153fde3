#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kmaml/model/config.hpp"
#include "kmaml/numerics/tensor.hpp"

namespace kmaml {

/// Named parameter groups. Entries are "<layer>/<role>".
///   theta: base network (weights [out,in,k,k], biases [out])
///   omega: one hypernetwork per base layer (kernel modulation only)
///   ce:    context encoder and its decoder (any modulated model)
///   scale: per-layer scalar generator (scalar modulation only)
template <typename T>
struct ParameterSet {
  TensorMap<T> theta;
  TensorMap<T> omega;
  TensorMap<T> ce;
  TensorMap<T> scale;

  /// Single map with "theta/", "omega/", "ce/", "scale/" prefixes.
  TensorMap<T> flatten() const;
  static ParameterSet unflatten(const TensorMap<T>& flat);

  template <typename U>
  ParameterSet<U> cast() const;

  bool operator==(const ParameterSet&) const = default;
};

/// Context encoder layers: three stride-2 convolutions then a decoder back
/// to full resolution.
struct ContextLayerSpec {
  std::string name;
  std::size_t n_in;
  std::size_t n_out;
  std::size_t kernel;
  std::size_t stride;
  bool upsample_before;
  bool relu;
};
std::vector<ContextLayerSpec> context_layers(const ModelConfig& cfg);
/// Index one past the last encoder entry of context_layers().
constexpr std::size_t kContextEncoderLayers = 3;

/// Number of hypernetwork outputs for a layer: rank * (n_out + n_in).
std::size_t hypernet_outputs(const LayerSpec& layer, std::size_t rank);

/// He-normal convolution weights and zero biases; the final base layer is
/// scaled by 0.1. Hypernetwork output layers start at zero weights with
/// biases chosen so that beta * alpha is all ones. The scalar generator
/// starts at zero weights and unit bias.
template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
std::size_t parameter_count(const TensorMap<T>& group);

}  // namespace kmaml

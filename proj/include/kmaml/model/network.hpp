#pragma once

// Differentiable building blocks: context encoder, layer hypernetworks,
// kernel modulation, base network and k-space data fidelity.

#include <cstddef>
#include <vector>

#include "kmaml/model/config.hpp"
#include "kmaml/numerics/autodiff.hpp"

namespace kmaml {

template <typename T>
struct ContextOutput {
  /// [1, c]: latent averaged over batch and space.
  ad::Var<T> gamma;
  /// [N, 2, H, W]: autoencoder reconstruction of the input.
  ad::Var<T> recon;
};

template <typename T>
ContextOutput<T> context_embed(const ad::Var<T>& x, const ad::VarMap<T>& ce, const ModelConfig& cfg);

template <typename T>
struct ModulationFactors {
  ad::Var<T> beta;   // [n_out, r]
  ad::Var<T> alpha;  // [r, n_in]
};

/// Two affine maps c -> hidden -> r(n_out + n_in), no nonlinearity. The
/// first r*n_out outputs form beta (row-major), the rest alpha.
template <typename T>
ModulationFactors<T> hypernet_forward(const ad::Var<T>& gamma, const ad::VarMap<T>& omega, const LayerSpec& layer,
                                      std::size_t rank);

/// weight [n_out, n_in, k, k] scaled per kernel by (beta . alpha)[o, i].
template <typename T>
ad::Var<T> modulate(const ad::Var<T>& weight, const ad::Var<T>& beta, const ad::Var<T>& alpha);

/// Per-layer scalars [1] from the scalar generator.
template <typename T>
std::vector<ad::Var<T>> layer_scales(const ad::Var<T>& gamma, const ad::VarMap<T>& scale, std::size_t layers);

template <typename T>
struct BaseForwardOptions {
  /// One [1] scalar per layer multiplying its pre-activation output.
  const std::vector<ad::Var<T>>* scales = nullptr;
  /// Receives each layer's output (post-activation) in forward order.
  std::vector<ad::Var<T>>* trace = nullptr;
};

/// Encoder-decoder with concatenative skips and, if configured, the global
/// residual x + net(x). `weights` holds "<layer>/weight" and "<layer>/bias".
template <typename T>
ad::Var<T> base_forward(const ad::Var<T>& x, const ad::VarMap<T>& weights, const BaseNetConfig& cfg,
                        const BaseForwardOptions<T>& options = {});

/// Replaces (lambda = inf) or blends (finite lambda) the predicted spectrum
/// with the measurement y on sampled entries. `mask` is [N,2,H,W] of 0/1.
template <typename T>
ad::Var<T> data_fidelity(const ad::Var<T>& x, const Tensor<T>& y, const Tensor<T>& mask, double lambda);

}  // namespace kmaml

#pragma once

// Test-time adaptation on a task's support set.

#include <cstddef>
#include <string>
#include <vector>

#include "kmaml/model/pipeline.hpp"

namespace kmaml {

enum class AdaptMode { on_the_fly, adapt_base, adapt_hypernet };

std::string to_string(AdaptMode m);
AdaptMode parse_adapt_mode(const std::string& text);

struct AdaptConfig {
  AdaptMode mode = AdaptMode::on_the_fly;
  std::size_t steps = 10;
  double lr = 1e-3;
  LossKind loss = LossKind::complex_l1;
};

void validate(const AdaptConfig& cfg);

template <typename T>
struct AdaptedModel {
  ParameterSet<T> params;
  /// adapt_base only: offset added to the modulated base weights. Zero
  /// steps leave it at zero, so the adapted weights equal theta_mod.
  TensorMap<T> theta_delta;
  /// Support loss before each step.
  std::vector<double> losses;
};

/// on_the_fly returns the parameters unchanged. adapt_base takes gradient
/// steps on the modulated base weights with the modulation frozen.
/// adapt_hypernet takes gradient steps on the hypernetwork weights with the
/// base network and context encoder frozen.
template <typename T>
AdaptedModel<T> finetune(const ModelConfig& model, const ParameterSet<T>& params, const Batch<T>& support,
                         const AdaptConfig& cfg);

/// Base weights used for embedding `gamma`: theta_mod + delta.
template <typename T>
TensorMap<T> adapted_base_weights(const ModelConfig& model, const AdaptedModel<T>& adapted, const Tensor<T>& gamma);

/// Reconstruction of a batch with an adapted model; the embedding comes
/// from the batch itself.
template <typename T>
Tensor<T> reconstruct_adapted(const ModelConfig& model, const AdaptedModel<T>& adapted, const Batch<T>& batch);

}  // namespace kmaml

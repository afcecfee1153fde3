#pragma once

// Full reconstruction path: context embedding, modulation, base network and
// data fidelity, over batches of task samples.

#include <cstddef>
#include <span>
#include <vector>

#include "kmaml/model/config.hpp"
#include "kmaml/model/network.hpp"
#include "kmaml/model/parameters.hpp"
#include "kmaml/tasks/task.hpp"

namespace kmaml {

/// Samples stacked as [N,2,H,W] tensors; `mask` is repeated over both
/// channels.
template <typename T>
struct Batch {
  Tensor<T> x_us;
  Tensor<T> y;
  Tensor<T> mask;
  Tensor<T> x_fs;

  std::size_t size() const { return x_us.dim(0); }
};

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples);
template <typename T>
Batch<T> make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);
/// Sample i of a batch as a batch of one.
template <typename T>
Batch<T> batch_item(const Batch<T>& batch, std::size_t i);
/// Concatenates two batches along the sample axis.
template <typename T>
Batch<T> concat_batches(const Batch<T>& a, const Batch<T>& b);

/// Differentiable handles for every parameter group.
template <typename T>
struct ModelVars {
  ad::VarMap<T> theta;
  ad::VarMap<T> omega;
  ad::VarMap<T> ce;
  ad::VarMap<T> scale;
};

/// Leaves for each group; `trainable` selects which require gradients.
struct Trainable {
  bool theta = false;
  bool omega = false;
  bool ce = false;
  bool scale = false;
};

template <typename T>
ModelVars<T> make_vars(const ParameterSet<T>& params, Trainable trainable = {});

template <typename T>
struct PipelineOptions {
  /// Use this embedding instead of computing one from the batch; the
  /// context encoder (and its auxiliary loss) is then skipped.
  const ad::Var<T>* gamma = nullptr;
  /// Added to the (modulated) base weights, keyed like theta.
  const ad::VarMap<T>* theta_delta = nullptr;
  /// false runs the plain base network on the same input.
  bool modulate = true;
  std::vector<ad::Var<T>>* trace = nullptr;
};

template <typename T>
struct PipelineOutput {
  ad::Var<T> x_rec;
  ad::Var<T> x_cnn;
  /// Undefined for unmodulated models.
  ad::Var<T> gamma;
  /// Weighted context autoencoder L1 loss; undefined for unmodulated models
  /// and when the embedding was supplied.
  ad::Var<T> aux_loss;
};

/// Base weights after modulation (theta_mod) for embedding `gamma`.
template <typename T>
ad::VarMap<T> modulated_weights(const ModelConfig& cfg, const ModelVars<T>& vars, const ad::Var<T>& gamma);

template <typename T>
PipelineOutput<T> run_pipeline(const ModelConfig& cfg, const ModelVars<T>& vars, const Batch<T>& batch,
                               const PipelineOptions<T>& options = {});

enum class LossKind { complex_l1, magnitude_l1 };

/// Mean L1 distance between reconstruction and fully sampled target.
template <typename T>
ad::Var<T> reconstruction_loss(const ad::Var<T>& x_rec, const Batch<T>& batch, LossKind kind = LossKind::complex_l1);

/// Inference without gradient recording.
template <typename T>
Tensor<T> reconstruct(const ModelConfig& cfg, const ParameterSet<T>& params, const Batch<T>& batch);

}  // namespace kmaml

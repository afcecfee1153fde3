#pragma once

// Bi-level training: kernel-modulated meta-learning plus the joint, MAML and
// scalar-modulation baselines.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kmaml/meta/adam.hpp"
#include "kmaml/model/pipeline.hpp"

namespace kmaml {

enum class Strategy { joint, maml, mmaml, km_maml };
enum class InnerMode { first_order, unrolled };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);
std::string to_string(InnerMode m);
InnerMode parse_inner_mode(const std::string& text);

/// Conditioning used by a strategy's model.
Modulation modulation_for(Strategy s);

struct TrainConfig {
  Strategy strategy = Strategy::km_maml;
  double outer_lr = 1e-3;
  double inner_lr = 1e-3;
  std::size_t inner_steps = 1;
  std::size_t task_batch = 3;
  std::size_t support_batch = 10;
  std::size_t query_batch = 10;
  std::size_t epochs = 0;
  InnerMode inner_mode = InnerMode::first_order;
  LossKind loss = LossKind::complex_l1;
  std::uint64_t seed = 0;
};

/// Throws ParameterError on invalid settings.
void validate(const TrainConfig& cfg);

/// Support and query mini-batches drawn from one task.
template <typename T>
struct Episode {
  const Task* task = nullptr;
  Batch<T> support;
  Batch<T> query;
};

/// Task mini-batch for meta-step `epoch`, drawn without replacement with an
/// RNG derived from (seed, epoch).
template <typename T>
std::vector<Episode<T>> sample_episodes(const std::vector<Task>& tasks, const TrainConfig& cfg, std::size_t epoch);

/// Parameter group adapted in the inner loop ("omega" or "theta"); empty
/// for joint training.
std::string adapted_group(Strategy s);

template <typename T>
struct InnerResult {
  /// Adapted copy of the group named by adapted_group().
  TensorMap<T> adapted;
  /// Support loss before each step.
  std::vector<double> losses;
};

/// Plain gradient steps on the adapted group using the support batch; every
/// other group is held fixed. Never modifies `params`.
template <typename T>
InnerResult<T> inner_adapt(const ModelConfig& model, const TrainConfig& cfg, const ParameterSet<T>& params,
                           const Batch<T>& support);

struct TaskLog {
  std::size_t epoch = 0;
  std::string task;
  double support_loss = 0.0;
  double query_loss = 0.0;
};

template <typename T>
struct MetaGradient {
  /// Sum over episodes of query loss plus auxiliary context loss.
  double objective = 0.0;
  /// Keyed like ParameterSet::flatten(); only groups the strategy trains.
  TensorMap<T> grads;
  std::vector<TaskLog> logs;
};

template <typename T>
MetaGradient<T> meta_gradient(const ModelConfig& model, const TrainConfig& cfg, const ParameterSet<T>& params,
                              const std::vector<Episode<T>>& episodes);

template <typename T>
struct TrainState {
  ParameterSet<T> params;
  Adam<T> adam;
  std::size_t epoch = 0;
};

/// One meta-step: sample episodes, compute the meta-gradient and apply Adam
/// at the outer rate. Non-finite values raise NumericError naming the
/// epoch and task.
template <typename T>
std::vector<TaskLog> meta_train_epoch(const ModelConfig& model, const TrainConfig& cfg,
                                      const std::vector<Task>& tasks, TrainState<T>& state);

}  // namespace kmaml

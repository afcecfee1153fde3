#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "kmaml/meta/adaptation.hpp"

namespace kmaml {

struct SampleMetric {
  std::string task;
  std::size_t sample = 0;  // image index within the task's source images
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricSummary {
  std::string task;
  std::size_t count = 0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
  double ssim_mean = 0.0;
  double ssim_std = 0.0;
};

struct EvalReport {
  std::vector<SampleMetric> model;
  /// Metrics of the zero-filled input itself.
  std::vector<SampleMetric> zero_filled;
  std::vector<MetricSummary> model_summary;
  std::vector<MetricSummary> zero_filled_summary;
};

/// Per-task mean and population standard deviation, tasks in first-seen
/// order.
std::vector<MetricSummary> summarize(const std::vector<SampleMetric>& samples);

/// Magnitude of sample `index` of a [N,2,H,W] tensor.
template <typename T>
std::vector<double> magnitude(const Tensor<T>& x, std::size_t index);

/// Adapts to each task's support set, then reconstructs the task's query set
/// as one batch (embedding from the whole query set) and scores each sample
/// against its fully sampled image.
template <typename T>
EvalReport evaluate(const ModelConfig& model, const ParameterSet<T>& params, const std::vector<Task>& tasks,
                    const AdaptConfig& adapt);

}  // namespace kmaml

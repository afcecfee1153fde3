#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kmaml/model/pipeline.hpp"

namespace kmaml {

/// Linear CKA between activation matrices with rows as examples. Columns are
/// mean-centred internally. Result clamped to [0,1].
double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

/// [N,C,H,W] activations as (N*H*W) x C rows, keeping at most `budget` rows
/// by taking every ceil(total/budget)-th position.
Eigen::MatrixXd activation_rows(const Tensor<double>& activations, std::size_t budget);

struct CkaProfile {
  std::vector<std::string> layers;
  std::vector<double> mean;
  std::vector<double> std;
};

/// Per base layer, CKA between plain and modulated activations on each
/// task's query samples; mean and population std over tasks.
CkaProfile cka_profile(const ModelConfig& cfg, const ParameterSet<double>& params, const std::vector<Task>& tasks,
                       std::size_t budget);

}  // namespace kmaml

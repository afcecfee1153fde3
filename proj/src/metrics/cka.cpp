#include "kmaml/metrics/cka.hpp"

#include <algorithm>
#include <cmath>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    throw DimensionError("linear_cka: " + std::to_string(x.rows()) + " vs " + std::to_string(y.rows()) + " rows");
  }
  if (x.rows() < 2) throw ParameterError("linear_cka: at least 2 examples are required");
  Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const double nx = xc.norm();
  const double ny = yc.norm();
  if (!(nx > 0.0) || !(ny > 0.0)) throw NumericError("linear_cka: zero-variance input");
  // Scale to unit norm first so the Gram products stay in range.
  xc /= nx;
  yc /= ny;
  const double hxy = (xc.transpose() * yc).squaredNorm();
  const double hxx = (xc.transpose() * xc).squaredNorm();
  const double hyy = (yc.transpose() * yc).squaredNorm();
  const double v = hxy / std::sqrt(hxx * hyy);
  if (!std::isfinite(v)) throw NumericError("linear_cka: non-finite result");
  return std::clamp(v, 0.0, 1.0);
}

Eigen::MatrixXd activation_rows(const Tensor<double>& a, std::size_t budget) {
  if (a.rank() != 4) throw DimensionError("activation_rows: expected [N,C,H,W], got " + shape_to_string(a.shape()));
  if (budget < 2) throw ParameterError("activation_rows: sample budget must be >= 2");
  const std::size_t n = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
  const std::size_t total = n * plane;
  const std::size_t stride = (total + budget - 1) / budget;
  const std::size_t rows = (total + stride - 1) / stride;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(c));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t pos = r * stride;
    const std::size_t s = pos / plane, p = pos % plane;
    for (std::size_t ch = 0; ch < c; ++ch) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(ch)) = a[(s * c + ch) * plane + p];
    }
  }
  return m;
}

CkaProfile cka_profile(const ModelConfig& cfg, const ParameterSet<double>& params, const std::vector<Task>& tasks,
                       std::size_t budget) {
  if (cfg.modulation == Modulation::none) throw ParameterError("cka_profile: model has no modulation");
  if (tasks.empty()) throw ParameterError("cka_profile: at least one task is required");
  if (budget < 2) throw ParameterError("cka_profile: sample budget must be >= 2");
  const auto layers = base_layers(cfg.base);
  std::vector<std::vector<double>> per_layer(layers.size());

  ad::NoGradGuard guard;
  const auto vars = make_vars(params);
  for (const auto& task : tasks) {
    if (task.query.empty()) throw ParameterError("cka_profile: task " + task.id + " has no query samples");
    const auto batch = make_batch<double>(task.query);
    std::vector<ad::Var<double>> plain_trace, mod_trace;
    PipelineOptions<double> plain;
    plain.modulate = false;
    plain.trace = &plain_trace;
    PipelineOptions<double> modulated;
    modulated.trace = &mod_trace;
    run_pipeline(cfg, vars, batch, plain);
    run_pipeline(cfg, vars, batch, modulated);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      per_layer[l].push_back(linear_cka(activation_rows(plain_trace[l].value(), budget),
                                        activation_rows(mod_trace[l].value(), budget)));
    }
  }

  CkaProfile profile;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& v = per_layer[l];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    profile.layers.push_back(layers[l].name);
    profile.mean.push_back(mean);
    profile.std.push_back(std::sqrt(var / static_cast<double>(v.size())));
  }
  return profile;
}

}  // namespace kmaml

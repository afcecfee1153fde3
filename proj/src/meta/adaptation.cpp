#include "kmaml/meta/adaptation.hpp"

#include <cmath>

#include "kmaml/numerics/errors.hpp"
#include "kmaml/numerics/ops.hpp"

namespace kmaml {

using ad::Var;

std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::on_the_fly: return "on_the_fly";
    case AdaptMode::adapt_base: return "adapt_base";
    case AdaptMode::adapt_hypernet: return "adapt_hypernet";
  }
  return "unknown";
}

AdaptMode parse_adapt_mode(const std::string& text) {
  for (auto m : {AdaptMode::on_the_fly, AdaptMode::adapt_base, AdaptMode::adapt_hypernet}) {
    if (text == to_string(m)) return m;
  }
  throw ParameterError("unknown adapt mode '" + text + "' (expected on_the_fly, adapt_base or adapt_hypernet)");
}

void validate(const AdaptConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ParameterError("adapt_lr must be >= 0");
}

namespace {

template <typename T>
Var<T> support_gamma(const ModelConfig& model, const ModelVars<T>& vars, const Batch<T>& batch) {
  if (model.modulation == Modulation::none) return {};
  return context_embed(Var<T>::constant(batch.x_us), vars.ce, model).gamma;
}

}  // namespace

template <typename T>
AdaptedModel<T> finetune(const ModelConfig& model, const ParameterSet<T>& params, const Batch<T>& support,
                         const AdaptConfig& cfg) {
  validate(cfg);
  AdaptedModel<T> out{params, {}, {}};
  if (cfg.mode == AdaptMode::on_the_fly) return out;
  if (support.x_us.empty()) throw ParameterError("finetune: empty support batch");
  if (cfg.mode == AdaptMode::adapt_hypernet && model.modulation != Modulation::kernel) {
    throw ParameterError("adapt_hypernet requires a kernel-modulated model");
  }

  ad::ScopedLabel label("finetune");
  const ModelVars<T> frozen = make_vars(params);
  const Var<T> gamma = support_gamma(model, frozen, support);
  const T lr = static_cast<T>(cfg.lr);

  if (cfg.mode == AdaptMode::adapt_base) {
    for (const auto& [name, t] : params.theta) out.theta_delta.emplace(name, Tensor<T>(t.shape()));
  }
  for (std::size_t u = 0; u < cfg.steps; ++u) {
    ad::ScopedLabel step("adapt step " + std::to_string(u));
    ModelVars<T> vars = frozen;
    PipelineOptions<T> opts;
    if (gamma.defined()) opts.gamma = &gamma;
    ad::VarMap<T> leaves;
    if (cfg.mode == AdaptMode::adapt_base) {
      leaves = ad::make_leaves(out.theta_delta, true);
      opts.theta_delta = &leaves;
    } else {
      leaves = ad::make_leaves(out.params.omega, true);
      vars.omega = leaves;
    }
    const Var<T> loss = reconstruction_loss(run_pipeline(model, vars, support, opts).x_rec, support, cfg.loss);
    out.losses.push_back(static_cast<double>(loss.value()[0]));
    const auto grads = ad::grad(loss, leaves);
    TensorMap<T>& target = cfg.mode == AdaptMode::adapt_base ? out.theta_delta : out.params.omega;
    for (auto& [name, t] : target) {
      const auto& g = grads.at(name).value();
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] -= lr * g[i];
    }
  }
  return out;
}

template <typename T>
TensorMap<T> adapted_base_weights(const ModelConfig& model, const AdaptedModel<T>& adapted, const Tensor<T>& gamma) {
  ad::NoGradGuard guard;
  const auto vars = make_vars(adapted.params);
  auto weights = ad::values_of(modulated_weights(model, vars, Var<T>::constant(gamma)));
  for (auto& [name, w] : weights) {
    auto d = adapted.theta_delta.find(name);
    if (d == adapted.theta_delta.end()) continue;
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] += d->second[i];
  }
  return weights;
}

template <typename T>
Tensor<T> reconstruct_adapted(const ModelConfig& model, const AdaptedModel<T>& adapted, const Batch<T>& batch) {
  ad::NoGradGuard guard;
  const auto vars = make_vars(adapted.params);
  PipelineOptions<T> opts;
  ad::VarMap<T> delta;
  if (!adapted.theta_delta.empty()) {
    delta = ad::make_constants(adapted.theta_delta);
    opts.theta_delta = &delta;
  }
  return run_pipeline(model, vars, batch, opts).x_rec.value();
}

#define KMAML_INSTANTIATE_ADAPT(T)                                                                              \
  template AdaptedModel<T> finetune(const ModelConfig&, const ParameterSet<T>&, const Batch<T>&,                \
                                    const AdaptConfig&);                                                        \
  template TensorMap<T> adapted_base_weights(const ModelConfig&, const AdaptedModel<T>&, const Tensor<T>&);     \
  template Tensor<T> reconstruct_adapted(const ModelConfig&, const AdaptedModel<T>&, const Batch<T>&);

KMAML_INSTANTIATE_ADAPT(float)
KMAML_INSTANTIATE_ADAPT(double)

}  // namespace kmaml

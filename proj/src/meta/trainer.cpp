#include "kmaml/meta/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kmaml/numerics/errors.hpp"
#include "kmaml/numerics/ops.hpp"

namespace kmaml {

using ad::Var;

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::joint: return "joint";
    case Strategy::maml: return "maml";
    case Strategy::mmaml: return "mmaml";
    case Strategy::km_maml: return "km_maml";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& text) {
  for (auto s : {Strategy::joint, Strategy::maml, Strategy::mmaml, Strategy::km_maml}) {
    if (text == to_string(s)) return s;
  }
  throw ParameterError("unknown strategy '" + text + "' (expected joint, maml, mmaml or km_maml)");
}

std::string to_string(InnerMode m) { return m == InnerMode::first_order ? "first_order" : "unrolled"; }

InnerMode parse_inner_mode(const std::string& text) {
  if (text == "first_order") return InnerMode::first_order;
  if (text == "unrolled") return InnerMode::unrolled;
  throw ParameterError("unknown inner_mode '" + text + "' (expected first_order or unrolled)");
}

Modulation modulation_for(Strategy s) {
  switch (s) {
    case Strategy::joint:
    case Strategy::maml: return Modulation::none;
    case Strategy::mmaml: return Modulation::scalar;
    case Strategy::km_maml: return Modulation::kernel;
  }
  return Modulation::none;
}

std::string adapted_group(Strategy s) {
  switch (s) {
    case Strategy::joint: return "";
    case Strategy::maml:
    case Strategy::mmaml: return "theta";
    case Strategy::km_maml: return "omega";
  }
  return "";
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.outer_lr >= 0.0) || !std::isfinite(cfg.outer_lr)) throw ParameterError("outer_lr must be >= 0");
  if (!(cfg.inner_lr >= 0.0) || !std::isfinite(cfg.inner_lr)) throw ParameterError("inner_lr must be >= 0");
  if (cfg.task_batch < 1) throw ParameterError("task_batch must be >= 1");
  if (cfg.support_batch < 1) throw ParameterError("support_batch must be >= 1");
  if (cfg.query_batch < 1) throw ParameterError("query_batch must be >= 1");
  if (cfg.loss == LossKind::magnitude_l1 && cfg.inner_mode == InnerMode::unrolled) {
    throw ParameterError("loss magnitude_l1 is only differentiable to first order; use inner_mode first_order");
  }
}

namespace {

std::vector<std::string> trained_groups(Strategy s) {
  switch (s) {
    case Strategy::joint:
    case Strategy::maml: return {"theta"};
    case Strategy::mmaml: return {"theta", "ce", "scale"};
    case Strategy::km_maml: return {"theta", "omega", "ce"};
  }
  return {};
}

template <typename T>
ad::VarMap<T>& group_of(ModelVars<T>& v, const std::string& g) {
  if (g == "theta") return v.theta;
  if (g == "omega") return v.omega;
  if (g == "ce") return v.ce;
  return v.scale;
}

template <typename T>
const ad::VarMap<T>& group_of(const ModelVars<T>& v, const std::string& g) {
  return group_of(const_cast<ModelVars<T>&>(v), g);
}

template <typename T>
Tensor<T> axpy(const Tensor<T>& x, T a, const Tensor<T>& g) {
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + a * g[i];
  return out;
}

template <typename T>
struct InnerState {
  ad::VarMap<T> adapted;
  std::vector<double> losses;
};

// Inner loop over `group`. With unrolled = false the steps are taken on
// detached copies and the returned entries are fresh leaves; otherwise they
// stay connected to `base` through the differentiated updates.
template <typename T>
InnerState<T> run_inner(const ModelConfig& model, const TrainConfig& cfg, const ModelVars<T>& base,
                        const std::string& group, const Batch<T>& support, bool unrolled) {
  InnerState<T> st;
  const ad::VarMap<T>& initial = group_of(base, group);
  st.adapted = unrolled ? initial : ad::make_leaves(ad::values_of(initial), true);
  const T lr = static_cast<T>(cfg.inner_lr);
  const bool conditioned = model.modulation != Modulation::none;
  for (std::size_t u = 0; u < cfg.inner_steps; ++u) {
    ad::ScopedLabel label("inner step " + std::to_string(u));
    ModelVars<T> vars = base;
    group_of(vars, group) = st.adapted;
    PipelineOptions<T> opts;
    Var<T> gamma;
    if (conditioned) {
      // Recomputed every step; the encoder is frozen here so the value is constant.
      gamma = context_embed(Var<T>::constant(support.x_us), vars.ce, model).gamma;
      opts.gamma = &gamma;
    }
    const auto out = run_pipeline(model, vars, support, opts);
    const Var<T> loss = reconstruction_loss(out.x_rec, support, cfg.loss);
    st.losses.push_back(static_cast<double>(loss.value()[0]));
    const auto grads = ad::grad(loss, st.adapted, unrolled);
    for (auto& [name, v] : st.adapted) {
      const auto& g = grads.at(name);
      v = unrolled ? ad::sub(v, ad::scale(g, lr)) : Var<T>::leaf(axpy(v.value(), T(-lr), g.value()), true);
    }
  }
  return st;
}

template <typename T>
void accumulate(TensorMap<T>& total, const std::string& key, const Tensor<T>& g) {
  auto it = total.find(key);
  if (it == total.end()) {
    total.emplace(key, g);
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
}

std::vector<std::size_t> draw(std::size_t pool, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(pool, count));
  return idx;
}

}  // namespace

template <typename T>
std::vector<Episode<T>> sample_episodes(const std::vector<Task>& tasks, const TrainConfig& cfg, std::size_t epoch) {
  if (tasks.empty()) throw ParameterError("training requires at least one task");
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x4550000000ULL + epoch));
  const auto chosen = draw(tasks.size(), cfg.task_batch, rng);
  std::vector<Episode<T>> out;
  for (std::size_t t : chosen) {
    const Task& task = tasks[t];
    if (task.support.empty() || task.query.empty()) {
      throw ParameterError("task " + task.id + " needs non-empty support and query sets");
    }
    const auto s = draw(task.support.size(), cfg.support_batch, rng);
    const auto q = draw(task.query.size(), cfg.query_batch, rng);
    out.push_back({&task, make_batch<T>(task.support, s), make_batch<T>(task.query, q)});
  }
  return out;
}

template <typename T>
InnerResult<T> inner_adapt(const ModelConfig& model, const TrainConfig& cfg, const ParameterSet<T>& params,
                           const Batch<T>& support) {
  const std::string group = adapted_group(cfg.strategy);
  if (group.empty()) throw ParameterError("strategy joint has no inner loop");
  if (support.x_us.empty()) throw ParameterError("inner_adapt: empty support batch");
  auto st = run_inner(model, cfg, make_vars(params), group, support, false);
  return {ad::values_of(st.adapted), std::move(st.losses)};
}

template <typename T>
MetaGradient<T> meta_gradient(const ModelConfig& model, const TrainConfig& cfg, const ParameterSet<T>& params,
                              const std::vector<Episode<T>>& episodes) {
  validate(cfg);
  if (episodes.empty()) throw ParameterError("meta_gradient: empty task batch");
  if (model.modulation != modulation_for(cfg.strategy)) {
    throw ParameterError("strategy " + to_string(cfg.strategy) + " needs modulation " +
                         to_string(modulation_for(cfg.strategy)) + ", model has " + to_string(model.modulation));
  }
  const auto groups = trained_groups(cfg.strategy);
  Trainable trainable;
  for (const auto& g : groups) {
    if (g == "theta") trainable.theta = true;
    if (g == "omega") trainable.omega = true;
    if (g == "ce") trainable.ce = true;
    if (g == "scale") trainable.scale = true;
  }
  const ModelVars<T> outer = make_vars(params, trainable);
  const ModelVars<T> frozen = make_vars(params);
  const std::string inner_group = adapted_group(cfg.strategy);
  const bool unrolled = cfg.inner_mode == InnerMode::unrolled;

  std::size_t pooled = 0;
  for (const auto& ep : episodes) pooled += ep.support.size() + ep.query.size();

  MetaGradient<T> result;
  for (const auto& ep : episodes) {
    ad::ScopedLabel label("task " + ep.task->id);
    TaskLog log;
    log.task = ep.task->id;
    Var<T> objective;
    // Leaves to differentiate, keyed by flat name.
    std::vector<std::pair<std::string, Var<T>>> wrt;
    for (const auto& g : groups) {
      if (!unrolled && g == inner_group) continue;
      for (const auto& [name, v] : group_of(outer, g)) wrt.emplace_back(g + "/" + name, v);
    }

    if (cfg.strategy == Strategy::joint) {
      const Var<T> ls = reconstruction_loss(run_pipeline(model, outer, ep.support).x_rec, ep.support, cfg.loss);
      const Var<T> lq = reconstruction_loss(run_pipeline(model, outer, ep.query).x_rec, ep.query, cfg.loss);
      log.support_loss = static_cast<double>(ls.value()[0]);
      log.query_loss = static_cast<double>(lq.value()[0]);
      // Pooled mean over every sample of the step.
      const T ws = static_cast<T>(static_cast<double>(ep.support.size()) / static_cast<double>(pooled));
      const T wq = static_cast<T>(static_cast<double>(ep.query.size()) / static_cast<double>(pooled));
      objective = ad::add(ad::scale(ls, ws), ad::scale(lq, wq));
    } else {
      const bool conditioned = model.modulation != Modulation::none;
      Var<T> gamma;
      Var<T> aux;
      if (conditioned) {
        const auto ctx = context_embed(Var<T>::constant(ep.support.x_us), outer.ce, model);
        gamma = ctx.gamma;
        if (model.aux_weight > 0.0) {
          aux = ad::scale(ad::l1_loss(ctx.recon, Var<T>::constant(ep.support.x_us)), static_cast<T>(model.aux_weight));
        }
      }
      auto inner = run_inner(model, cfg, unrolled ? outer : frozen, inner_group, ep.support, unrolled);
      if (!inner.losses.empty()) {
        log.support_loss = inner.losses.front();
      } else {
        ad::NoGradGuard guard;
        PipelineOptions<T> opts;
        if (conditioned) opts.gamma = &gamma;
        log.support_loss = static_cast<double>(
            reconstruction_loss(run_pipeline(model, frozen, ep.support, opts).x_rec, ep.support, cfg.loss).value()[0]);
      }

      ModelVars<T> query_vars = outer;
      group_of(query_vars, inner_group) = inner.adapted;
      PipelineOptions<T> opts;
      if (conditioned) opts.gamma = &gamma;
      const Var<T> lq = reconstruction_loss(run_pipeline(model, query_vars, ep.query, opts).x_rec, ep.query, cfg.loss);
      log.query_loss = static_cast<double>(lq.value()[0]);
      objective = aux.defined() ? ad::add(lq, aux) : lq;
      if (!unrolled) {
        for (const auto& [name, v] : inner.adapted) wrt.emplace_back(inner_group + "/" + name, v);
      }
    }

    std::vector<Var<T>> vars;
    vars.reserve(wrt.size());
    for (const auto& [name, v] : wrt) vars.push_back(v);
    const auto grads = ad::grad(objective, vars);
    for (std::size_t i = 0; i < wrt.size(); ++i) accumulate(result.grads, wrt[i].first, grads[i].value());
    result.objective += static_cast<double>(objective.value()[0]);
    result.logs.push_back(log);
  }
  return result;
}

template <typename T>
std::vector<TaskLog> meta_train_epoch(const ModelConfig& model, const TrainConfig& cfg,
                                      const std::vector<Task>& tasks, TrainState<T>& state) {
  ad::ScopedLabel label("epoch " + std::to_string(state.epoch));
  const auto episodes = sample_episodes<T>(tasks, cfg, state.epoch);
  auto mg = meta_gradient(model, cfg, state.params, episodes);
  if (!std::isfinite(mg.objective)) {
    throw NumericError("non-finite meta objective in epoch " + std::to_string(state.epoch));
  }
  auto flat = state.params.flatten();
  state.adam.update(flat, mg.grads, cfg.outer_lr);
  state.params = ParameterSet<T>::unflatten(flat);
  for (auto& log : mg.logs) log.epoch = state.epoch;
  ++state.epoch;
  return mg.logs;
}

#define KMAML_INSTANTIATE_TRAINER(T)                                                                          \
  template std::vector<Episode<T>> sample_episodes(const std::vector<Task>&, const TrainConfig&, std::size_t); \
  template InnerResult<T> inner_adapt(const ModelConfig&, const TrainConfig&, const ParameterSet<T>&,          \
                                      const Batch<T>&);                                                         \
  template MetaGradient<T> meta_gradient(const ModelConfig&, const TrainConfig&, const ParameterSet<T>&,       \
                                         const std::vector<Episode<T>>&);                                       \
  template std::vector<TaskLog> meta_train_epoch(const ModelConfig&, const TrainConfig&,                       \
                                                 const std::vector<Task>&, TrainState<T>&);

KMAML_INSTANTIATE_TRAINER(float)
KMAML_INSTANTIATE_TRAINER(double)

}  // namespace kmaml

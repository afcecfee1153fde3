#include "kmaml/model/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kmaml/numerics/errors.hpp"
#include "kmaml/numerics/ops.hpp"

namespace kmaml {

using ad::Var;

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("make_batch: empty batch");
  const auto& first = samples[indices[0]];
  const std::size_t h = first.x_fs.height;
  const std::size_t w = first.x_fs.width;
  const std::size_t n = indices.size();
  const std::size_t plane = h * w;
  Batch<T> b{Tensor<T>({n, 2, h, w}), Tensor<T>({n, 2, h, w}), Tensor<T>({n, 2, h, w}), Tensor<T>({n, 2, h, w})};
  for (std::size_t s = 0; s < n; ++s) {
    const Sample& smp = samples[indices[s]];
    if (smp.x_fs.height != h || smp.x_fs.width != w) throw DimensionError("make_batch: samples differ in size");
    T* xu = b.x_us.data() + s * 2 * plane;
    T* y = b.y.data() + s * 2 * plane;
    T* m = b.mask.data() + s * 2 * plane;
    T* xf = b.x_fs.data() + s * 2 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      xu[i] = static_cast<T>(smp.x_us.real[i]);
      xu[plane + i] = static_cast<T>(smp.x_us.imag[i]);
      y[i] = static_cast<T>(smp.y.real[i]);
      y[plane + i] = static_cast<T>(smp.y.imag[i]);
      m[i] = m[plane + i] = smp.mask.kept[i] ? T(1) : T(0);
      xf[i] = static_cast<T>(smp.x_fs.real[i]);
      xf[plane + i] = static_cast<T>(smp.x_fs.imag[i]);
    }
  }
  return b;
}

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples) {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch<T>(samples, all);
}

namespace {

template <typename T>
Tensor<T> slice_samples(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  const std::size_t per = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = count;
  return Tensor<T>(s, std::vector<T>(t.data() + begin * per, t.data() + (begin + count) * per));
}

template <typename T>
Tensor<T> join_samples(const Tensor<T>& a, const Tensor<T>& b) {
  Shape s = a.shape();
  Shape sb = b.shape();
  sb[0] = s[0];
  require_same_shape(s, sb, "concat_batches");
  s[0] += b.dim(0);
  std::vector<T> data(a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor<T>(s, std::move(data));
}

template <typename T>
ad::VarMap<T> leaves(const TensorMap<T>& m, bool trainable) {
  return ad::make_leaves(m, trainable);
}

}  // namespace

template <typename T>
Batch<T> batch_item(const Batch<T>& batch, std::size_t i) {
  return {slice_samples(batch.x_us, i, 1), slice_samples(batch.y, i, 1), slice_samples(batch.mask, i, 1),
          slice_samples(batch.x_fs, i, 1)};
}

template <typename T>
Batch<T> concat_batches(const Batch<T>& a, const Batch<T>& b) {
  return {join_samples(a.x_us, b.x_us), join_samples(a.y, b.y), join_samples(a.mask, b.mask),
          join_samples(a.x_fs, b.x_fs)};
}

template <typename T>
ModelVars<T> make_vars(const ParameterSet<T>& params, Trainable trainable) {
  return {leaves(params.theta, trainable.theta), leaves(params.omega, trainable.omega), leaves(params.ce, trainable.ce),
          leaves(params.scale, trainable.scale)};
}

template <typename T>
ad::VarMap<T> modulated_weights(const ModelConfig& cfg, const ModelVars<T>& vars, const Var<T>& gamma) {
  ad::VarMap<T> out = vars.theta;
  if (cfg.modulation != Modulation::kernel) return out;
  for (const auto& layer : base_layers(cfg.base)) {
    const auto f = hypernet_forward(gamma, vars.omega, layer, cfg.hyper.rank);
    ad::ScopedLabel label("modulate_" + layer.name);
    auto& w = out.at(layer.name + "/weight");
    w = modulate(w, f.beta, f.alpha);
  }
  return out;
}

template <typename T>
PipelineOutput<T> run_pipeline(const ModelConfig& cfg, const ModelVars<T>& vars, const Batch<T>& batch,
                               const PipelineOptions<T>& options) {
  PipelineOutput<T> out;
  const Var<T> x = Var<T>::constant(batch.x_us);
  const bool conditioned = cfg.modulation != Modulation::none;
  if (conditioned && options.gamma) {
    out.gamma = *options.gamma;
  } else if (conditioned) {
    const auto ctx = context_embed(x, vars.ce, cfg);
    out.gamma = ctx.gamma;
    if (cfg.aux_weight > 0.0) out.aux_loss = ad::scale(ad::l1_loss(ctx.recon, x), static_cast<T>(cfg.aux_weight));
  }

  const bool apply = conditioned && options.modulate;
  ad::VarMap<T> weights =
      apply && cfg.modulation == Modulation::kernel ? modulated_weights(cfg, vars, out.gamma) : vars.theta;
  if (options.theta_delta) {
    for (auto& [name, w] : weights) w = ad::add(w, options.theta_delta->at(name));
  }
  std::vector<Var<T>> scales;
  BaseForwardOptions<T> base_opts;
  base_opts.trace = options.trace;
  if (apply && cfg.modulation == Modulation::scalar) {
    scales = layer_scales(out.gamma, vars.scale, base_layers(cfg.base).size());
    base_opts.scales = &scales;
  }
  out.x_cnn = base_forward(x, weights, cfg.base, base_opts);
  out.x_rec = data_fidelity(out.x_cnn, batch.y, batch.mask, cfg.dc_lambda);
  return out;
}

template <typename T>
Var<T> reconstruction_loss(const Var<T>& x_rec, const Batch<T>& batch, LossKind kind) {
  ad::ScopedLabel scope("loss");
  if (kind == LossKind::complex_l1) return ad::l1_loss(x_rec, Var<T>::constant(batch.x_fs));
  const Var<T> target = ad::complex_magnitude(Var<T>::constant(batch.x_fs));
  return ad::l1_loss(ad::complex_magnitude(x_rec), target);
}

template <typename T>
Tensor<T> reconstruct(const ModelConfig& cfg, const ParameterSet<T>& params, const Batch<T>& batch) {
  ad::NoGradGuard guard;
  return run_pipeline(cfg, make_vars(params), batch).x_rec.value();
}

#define KMAML_INSTANTIATE_PIPELINE(T)                                                                          \
  template Batch<T> make_batch(std::span<const Sample>);                                                       \
  template Batch<T> make_batch(std::span<const Sample>, std::span<const std::size_t>);                         \
  template Batch<T> batch_item(const Batch<T>&, std::size_t);                                                  \
  template Batch<T> concat_batches(const Batch<T>&, const Batch<T>&);                                          \
  template ModelVars<T> make_vars(const ParameterSet<T>&, Trainable);                                          \
  template ad::VarMap<T> modulated_weights(const ModelConfig&, const ModelVars<T>&, const Var<T>&);            \
  template PipelineOutput<T> run_pipeline(const ModelConfig&, const ModelVars<T>&, const Batch<T>&,            \
                                          const PipelineOptions<T>&);                                          \
  template Var<T> reconstruction_loss(const Var<T>&, const Batch<T>&, LossKind);                               \
  template Tensor<T> reconstruct(const ModelConfig&, const ParameterSet<T>&, const Batch<T>&);

KMAML_INSTANTIATE_PIPELINE(float)
KMAML_INSTANTIATE_PIPELINE(double)

}  // namespace kmaml

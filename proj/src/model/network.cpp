#include "kmaml/model/network.hpp"

#include <cmath>

#include "kmaml/model/parameters.hpp"
#include "kmaml/numerics/errors.hpp"
#include "kmaml/numerics/ops.hpp"

namespace kmaml {

using ad::Var;

namespace {

template <typename T>
const Var<T>& lookup(const ad::VarMap<T>& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw DimensionError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
Var<T> conv_layer(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride) {
  const std::size_t k = w.shape().at(2);
  return ad::add_channel_bias(ad::conv2d(x, w, kernels::ConvGeometry{stride, k / 2}), b);
}

}  // namespace

template <typename T>
ContextOutput<T> context_embed(const Var<T>& x, const ad::VarMap<T>& ce, const ModelConfig& cfg) {
  ad::ScopedLabel scope("context_encoder");
  if (x.shape().size() != 4 || x.shape()[1] != 2) {
    throw DimensionError("context_embed: expected [N,2,H,W], got " + shape_to_string(x.shape()));
  }
  require_input_size(cfg, x.shape()[2], x.shape()[3]);
  const auto layers = context_layers(cfg);
  Var<T> h = x;
  ContextOutput<T> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    ad::ScopedLabel label(L.name);
    if (L.upsample_before) h = ad::upsample2(h);
    h = conv_layer(h, lookup(ce, L.name + "/weight"), lookup(ce, L.name + "/bias"), L.stride);
    if (L.relu) h = ad::relu(h);
    if (l + 1 == kContextEncoderLayers) {
      const std::size_t n = h.shape()[0];
      Var<T> per_sample = ad::mean_spatial(h);  // [N, c]
      Var<T> pooled = ad::scale(ad::sum_rows(per_sample), T(1) / static_cast<T>(n));
      out.gamma = ad::reshape(pooled, {1, h.shape()[1]});
    }
  }
  out.recon = h;
  return out;
}

template <typename T>
ModulationFactors<T> hypernet_forward(const Var<T>& gamma, const ad::VarMap<T>& omega, const LayerSpec& layer,
                                      std::size_t rank) {
  ad::ScopedLabel scope("hypernet_" + layer.name);
  const Var<T> hidden =
      ad::linear(gamma, lookup(omega, layer.name + "/fc1_weight"), lookup(omega, layer.name + "/fc1_bias"));
  const Var<T> out =
      ad::linear(hidden, lookup(omega, layer.name + "/fc2_weight"), lookup(omega, layer.name + "/fc2_bias"));
  const std::size_t n_beta = rank * layer.n_out;
  const std::size_t n_alpha = rank * layer.n_in;
  if (out.shape() != Shape{1, n_beta + n_alpha}) {
    throw DimensionError("hypernet_forward: " + layer.name + " produced " + shape_to_string(out.shape()) +
                         ", expected [1x" + std::to_string(n_beta + n_alpha) + "]");
  }
  return {ad::reshape(ad::slice_dim1(out, 0, n_beta), {layer.n_out, rank}),
          ad::reshape(ad::slice_dim1(out, n_beta, n_alpha), {rank, layer.n_in})};
}

template <typename T>
Var<T> modulate(const Var<T>& weight, const Var<T>& beta, const Var<T>& alpha) {
  const Shape& s = weight.shape();
  if (s.size() != 4 || beta.shape().size() != 2 || alpha.shape().size() != 2 || beta.shape()[0] != s[0] ||
      alpha.shape()[1] != s[1] || beta.shape()[1] != alpha.shape()[0]) {
    throw DimensionError("modulate: kernel " + shape_to_string(s) + " with factors " + shape_to_string(beta.shape()) +
                         " and " + shape_to_string(alpha.shape()));
  }
  return ad::mul(weight, ad::expand_kernel(ad::matmul(beta, alpha), s[2]));
}

template <typename T>
std::vector<Var<T>> layer_scales(const Var<T>& gamma, const ad::VarMap<T>& scale, std::size_t layers) {
  ad::ScopedLabel scope("scale_generator");
  const Var<T> all = ad::linear(gamma, lookup(scale, std::string("generator/weight")),
                                lookup(scale, std::string("generator/bias")));
  if (all.shape() != Shape{1, layers}) {
    throw DimensionError("layer_scales: generator produced " + shape_to_string(all.shape()));
  }
  std::vector<Var<T>> out;
  for (std::size_t l = 0; l < layers; ++l) out.push_back(ad::reshape(ad::slice_dim1(all, l, 1), {1}));
  return out;
}

template <typename T>
Var<T> base_forward(const Var<T>& x, const ad::VarMap<T>& weights, const BaseNetConfig& cfg,
                    const BaseForwardOptions<T>& options) {
  const auto layers = base_layers(cfg);
  if (x.shape().size() != 4 || x.shape()[1] != cfg.io_channels) {
    throw DimensionError("base_forward: expected [N," + std::to_string(cfg.io_channels) + ",H,W], got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t unit = std::size_t{1} << cfg.levels;
  if (x.shape()[2] % unit != 0 || x.shape()[3] % unit != 0) {
    throw DimensionError("base_forward: input " + shape_to_string(x.shape()) + " must be divisible by " +
                         std::to_string(unit));
  }
  if (options.scales && options.scales->size() != layers.size()) {
    throw DimensionError("base_forward: one scale per layer required");
  }

  std::vector<Var<T>> encoder;
  Var<T> h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    ad::ScopedLabel label(L.name);
    if (L.kind == LayerKind::up) h = ad::concat_dim1(ad::upsample2(h), encoder.at(L.skip_from));
    h = conv_layer(h, lookup(weights, L.name + "/weight"), lookup(weights, L.name + "/bias"), L.stride);
    if (options.scales) h = ad::scale_by(h, (*options.scales)[l]);
    if (L.relu) h = ad::relu(h);
    if (L.kind == LayerKind::down) encoder.push_back(h);
    if (options.trace) options.trace->push_back(h);
  }
  if (cfg.residual) {
    ad::ScopedLabel label("residual");
    h = ad::add(h, x);
  }
  return h;
}

template <typename T>
Var<T> data_fidelity(const Var<T>& x, const Tensor<T>& y, const Tensor<T>& mask, double lambda) {
  ad::ScopedLabel scope("data_fidelity");
  if (!(lambda > 0.0)) throw ParameterError("data_fidelity: lambda must be > 0");
  require_same_shape(x.shape(), y.shape(), "data_fidelity (image vs measurement)");
  require_same_shape(x.shape(), mask.shape(), "data_fidelity (image vs mask)");
  // Weight of the measurement on sampled entries: 1 for hard replacement.
  const double w = std::isinf(lambda) ? 1.0 : lambda / (1.0 + lambda);
  Tensor<T> keep(mask.shape());
  Tensor<T> measured(mask.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    const bool sampled = mask[i] != T(0);
    keep[i] = sampled ? static_cast<T>(1.0 - w) : T(1);
    measured[i] = sampled ? static_cast<T>(w) * y[i] : T(0);
  }
  const Var<T> k = ad::dft2(x);
  return ad::idft2(ad::add_const(ad::mul_const(k, keep), measured));
}

#define KMAML_INSTANTIATE_NETWORK(T)                                                                            \
  template ContextOutput<T> context_embed(const Var<T>&, const ad::VarMap<T>&, const ModelConfig&);             \
  template ModulationFactors<T> hypernet_forward(const Var<T>&, const ad::VarMap<T>&, const LayerSpec&,         \
                                                 std::size_t);                                                  \
  template Var<T> modulate(const Var<T>&, const Var<T>&, const Var<T>&);                                        \
  template std::vector<Var<T>> layer_scales(const Var<T>&, const ad::VarMap<T>&, std::size_t);                  \
  template Var<T> base_forward(const Var<T>&, const ad::VarMap<T>&, const BaseNetConfig&,                       \
                               const BaseForwardOptions<T>&);                                                   \
  template Var<T> data_fidelity(const Var<T>&, const Tensor<T>&, const Tensor<T>&, double);

KMAML_INSTANTIATE_NETWORK(float)
KMAML_INSTANTIATE_NETWORK(double)

}  // namespace kmaml

#include "kmaml/model/parameters.hpp"

#include <cmath>
#include <random>

#include "kmaml/numerics/errors.hpp"
#include "kmaml/tasks/task.hpp"

namespace kmaml {

namespace {

const char* const kGroups[] = {"theta/", "omega/", "ce/", "scale/"};

template <typename T>
Tensor<T> he_normal(const Shape& shape, std::size_t fan_in, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(normal(rng));
  return t;
}

}  // namespace

template <typename T>
TensorMap<T> ParameterSet<T>::flatten() const {
  TensorMap<T> out;
  const TensorMap<T>* groups[] = {&theta, &omega, &ce, &scale};
  for (std::size_t g = 0; g < 4; ++g) {
    for (const auto& [name, t] : *groups[g]) out.emplace(kGroups[g] + name, t);
  }
  return out;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::unflatten(const TensorMap<T>& flat) {
  ParameterSet<T> p;
  TensorMap<T>* groups[] = {&p.theta, &p.omega, &p.ce, &p.scale};
  for (const auto& [name, t] : flat) {
    bool placed = false;
    for (std::size_t g = 0; g < 4 && !placed; ++g) {
      const std::string prefix = kGroups[g];
      if (name.starts_with(prefix)) {
        groups[g]->emplace(name.substr(prefix.size()), t);
        placed = true;
      }
    }
    if (!placed) throw FormatError("parameter '" + name + "' has no known group prefix");
  }
  return p;
}

template <typename T>
template <typename U>
ParameterSet<U> ParameterSet<T>::cast() const {
  auto convert = [](const TensorMap<T>& in) {
    TensorMap<U> out;
    for (const auto& [name, t] : in) out.emplace(name, t.template cast<U>());
    return out;
  };
  return {convert(theta), convert(omega), convert(ce), convert(scale)};
}

std::vector<ContextLayerSpec> context_layers(const ModelConfig& cfg) {
  const std::size_t c = cfg.hyper.embed_dim;
  const std::size_t a = cfg.hyper.context_channels.at(0);
  const std::size_t b = cfg.hyper.context_channels.at(1);
  return {
      {"enc_0", 2, a, 3, 2, false, true}, {"enc_1", a, b, 3, 2, false, true}, {"enc_2", b, c, 3, 2, false, true},
      {"dec_0", c, b, 1, 1, false, true}, {"dec_1", b, a, 3, 1, true, true},  {"dec_2", a, a, 3, 1, true, true},
      {"dec_3", a, 2, 3, 1, true, false},
  };
}

std::size_t hypernet_outputs(const LayerSpec& layer, std::size_t rank) { return rank * (layer.n_out + layer.n_in); }

template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ParameterSet<T> p;
  const auto layers = base_layers(cfg.base);
  const std::size_t k = cfg.base.kernel_size;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    std::mt19937_64 rng(derive_seed(seed, 100 + l));
    const double gain = l + 1 == layers.size() ? 0.1 : 1.0;
    p.theta.emplace(L.name + "/weight", he_normal<T>({L.n_out, L.n_in, k, k}, L.n_in * k * k, gain, rng));
    p.theta.emplace(L.name + "/bias", Tensor<T>({L.n_out}));
  }
  if (cfg.modulation == Modulation::none) return p;

  const auto ctx = context_layers(cfg);
  for (std::size_t l = 0; l < ctx.size(); ++l) {
    const auto& C = ctx[l];
    std::mt19937_64 rng(derive_seed(seed, 200 + l));
    p.ce.emplace(C.name + "/weight",
                 he_normal<T>({C.n_out, C.n_in, C.kernel, C.kernel}, C.n_in * C.kernel * C.kernel, 1.0, rng));
    p.ce.emplace(C.name + "/bias", Tensor<T>({C.n_out}));
  }

  const std::size_t c = cfg.hyper.embed_dim;
  if (cfg.modulation == Modulation::kernel) {
    const std::size_t r = cfg.hyper.rank;
    const std::size_t hidden = cfg.hyper.hidden;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      std::mt19937_64 rng(derive_seed(seed, 300 + l));
      // Linear first layer: variance-preserving scale 1/sqrt(c).
      p.omega.emplace(L.name + "/fc1_weight", he_normal<T>({hidden, c}, 2 * c, 1.0, rng));
      p.omega.emplace(L.name + "/fc1_bias", Tensor<T>({hidden}));
      const std::size_t outs = hypernet_outputs(L, r);
      p.omega.emplace(L.name + "/fc2_weight", Tensor<T>({outs, hidden}));
      Tensor<T> bias({outs}, T(1));
      for (std::size_t i = r * L.n_out; i < outs; ++i) bias[i] = static_cast<T>(1.0 / static_cast<double>(r));
      p.omega.emplace(L.name + "/fc2_bias", std::move(bias));
    }
  } else {
    p.scale.emplace("generator/weight", Tensor<T>({layers.size(), c}));
    p.scale.emplace("generator/bias", Tensor<T>({layers.size()}, T(1)));
  }
  return p;
}

template <typename T>
std::size_t parameter_count(const TensorMap<T>& group) {
  std::size_t n = 0;
  for (const auto& [name, t] : group) n += t.numel();
  return n;
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template ParameterSet<double> ParameterSet<float>::cast<double>() const;
template ParameterSet<float> ParameterSet<double>::cast<float>() const;
template ParameterSet<float> ParameterSet<float>::cast<float>() const;
template ParameterSet<double> ParameterSet<double>::cast<double>() const;
template ParameterSet<float> init_parameters<float>(const ModelConfig&, std::uint64_t);
template ParameterSet<double> init_parameters<double>(const ModelConfig&, std::uint64_t);
template std::size_t parameter_count<float>(const TensorMap<float>&);
template std::size_t parameter_count<double>(const TensorMap<double>&);

}  // namespace kmaml

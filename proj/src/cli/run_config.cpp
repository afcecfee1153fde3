#include "kmaml/cli/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "kmaml/tasks/phantom.hpp"

namespace kmaml {

ConfigError::ConfigError(const std::string& key, const std::string& what)
    : ParameterError(key + ": " + what), key_(key) {}

RunConfig::RunConfig() {
  train.epochs = 200;
  train.seed = 0;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || std::isnan(out)) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

template <typename F>
auto wrap(const std::string& key, F f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, e.what());
  }
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(v)) out.push_back(to_size(key, s));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(to_double(key, s));
  return out;
}

std::vector<MaskType> to_masks(const std::string& key, const std::string& v) {
  std::vector<MaskType> out;
  for (const auto& s : split_list(v)) out.push_back(wrap(key, [&] { return parse_mask_type(s); }));
  return out;
}

std::string precision_name(Precision p) { return p == Precision::f32 ? "float" : "double"; }

std::string loss_name(LossKind k) { return k == LossKind::complex_l1 ? "complex_l1" : "magnitude_l1"; }

LossKind parse_loss(const std::string& key, const std::string& v) {
  if (v == "complex_l1") return LossKind::complex_l1;
  if (v == "magnitude_l1") return LossKind::magnitude_l1;
  throw ConfigError(key, "expected complex_l1 or magnitude_l1, got '" + v + "'");
}

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::vector<Entry> build_entries() {
  auto size_entry = [](std::string name, std::string help, std::size_t RunConfig::*field) {
    return Entry{{name, help},
                 [name, field](RunConfig& c, const std::string& v) { c.*field = to_size(name, v); },
                 [field](const RunConfig& c) { return std::to_string(c.*field); }};
  };
  auto double_entry = [](std::string name, std::string help, double RunConfig::*field) {
    return Entry{{name, help},
                 [name, field](RunConfig& c, const std::string& v) { c.*field = to_double(name, v); },
                 [field](const RunConfig& c) { return fmt(c.*field); }};
  };
  auto masks = [](const std::vector<MaskType>& m) { return join(m, [](MaskType t) { return to_string(t); }); };
  auto doubles = [](const std::vector<double>& d) { return join(d, fmt); };
  auto sizes = [](const std::vector<std::size_t>& d) {
    return join(d, [](std::size_t s) { return std::to_string(s); });
  };

  std::vector<Entry> e;
  e.push_back({{"data_dir", "dataset directory written by gen-data"},
               [](RunConfig& c, const std::string& v) { c.data_dir = v; },
               [](const RunConfig& c) { return c.data_dir.string(); }});
  e.push_back({{"contrasts", "comma-separated contrast tags (T1, FLAIR, T2, PD)"},
               [](RunConfig& c, const std::string& v) { c.contrasts = split_list(v); },
               [](const RunConfig& c) { return join(c.contrasts, [](const std::string& s) { return s; }); }});
  e.push_back(size_entry("images_per_contrast", "phantoms generated per contrast", &RunConfig::images_per_contrast));
  e.push_back(size_entry("image_size", "phantom height and width", &RunConfig::image_size));
  e.push_back(size_entry("train_images", "leading images per contrast used for training tasks", &RunConfig::train_images));
  e.push_back({{"mask_types", "training mask types (cartesian, gaussian)"},
               [](RunConfig& c, const std::string& v) { c.mask_types = to_masks("mask_types", v); },
               [masks](const RunConfig& c) { return masks(c.mask_types); }});
  e.push_back({{"accelerations", "training acceleration factors"},
               [](RunConfig& c, const std::string& v) { c.accelerations = to_doubles("accelerations", v); },
               [doubles](const RunConfig& c) { return doubles(c.accelerations); }});
  e.push_back(double_entry("center_fraction", "fully sampled low-frequency fraction", &RunConfig::center_fraction));
  e.push_back(double_entry("split_ratio", "support share of each task's images", &RunConfig::split_ratio));
  e.push_back(double_entry("noise_sigma", "k-space noise level on sampled entries", &RunConfig::noise_sigma));
  e.push_back({{"eval_mask_types", "evaluation mask types"},
               [](RunConfig& c, const std::string& v) { c.eval_mask_types = to_masks("eval_mask_types", v); },
               [masks](const RunConfig& c) { return masks(c.eval_mask_types); }});
  e.push_back({{"eval_accelerations", "evaluation acceleration factors"},
               [](RunConfig& c, const std::string& v) { c.eval_accelerations = to_doubles("eval_accelerations", v); },
               [doubles](const RunConfig& c) { return doubles(c.eval_accelerations); }});

  e.push_back({{"levels", "base network resolution levels"},
               [](RunConfig& c, const std::string& v) { c.model.base.levels = to_size("levels", v); },
               [](const RunConfig& c) { return std::to_string(c.model.base.levels); }});
  e.push_back({{"channels", "base network channels per level"},
               [](RunConfig& c, const std::string& v) { c.model.base.channels = to_sizes("channels", v); },
               [sizes](const RunConfig& c) { return sizes(c.model.base.channels); }});
  e.push_back({{"bottleneck", "bottleneck channels"},
               [](RunConfig& c, const std::string& v) { c.model.base.bottleneck = to_size("bottleneck", v); },
               [](const RunConfig& c) { return std::to_string(c.model.base.bottleneck); }});
  e.push_back({{"kernel_size", "convolution kernel size (odd)"},
               [](RunConfig& c, const std::string& v) { c.model.base.kernel_size = to_size("kernel_size", v); },
               [](const RunConfig& c) { return std::to_string(c.model.base.kernel_size); }});
  e.push_back({{"residual", "add the undersampled input to the network output"},
               [](RunConfig& c, const std::string& v) { c.model.base.residual = to_bool("residual", v); },
               [](const RunConfig& c) { return std::string(c.model.base.residual ? "true" : "false"); }});
  e.push_back({{"embed_dim", "context embedding length"},
               [](RunConfig& c, const std::string& v) { c.model.hyper.embed_dim = to_size("embed_dim", v); },
               [](const RunConfig& c) { return std::to_string(c.model.hyper.embed_dim); }});
  e.push_back({{"hyper_hidden", "hypernetwork hidden width"},
               [](RunConfig& c, const std::string& v) { c.model.hyper.hidden = to_size("hyper_hidden", v); },
               [](const RunConfig& c) { return std::to_string(c.model.hyper.hidden); }});
  e.push_back({{"rank", "rank of the kernel modulation"},
               [](RunConfig& c, const std::string& v) { c.model.hyper.rank = to_size("rank", v); },
               [](const RunConfig& c) { return std::to_string(c.model.hyper.rank); }});
  e.push_back({{"context_channels", "context encoder channels of its first two stages"},
               [](RunConfig& c, const std::string& v) {
                 c.model.hyper.context_channels = to_sizes("context_channels", v);
               },
               [sizes](const RunConfig& c) { return sizes(c.model.hyper.context_channels); }});
  e.push_back({{"aux_weight", "weight of the context reconstruction loss"},
               [](RunConfig& c, const std::string& v) { c.model.aux_weight = to_double("aux_weight", v); },
               [](const RunConfig& c) { return fmt(c.model.aux_weight); }});
  e.push_back({{"dc_lambda", "data fidelity weight (inf replaces measured entries)"},
               [](RunConfig& c, const std::string& v) { c.model.dc_lambda = to_double("dc_lambda", v); },
               [](const RunConfig& c) { return fmt(c.model.dc_lambda); }});

  e.push_back({{"strategy", "joint, maml, mmaml or km_maml"},
               [](RunConfig& c, const std::string& v) {
                 c.train.strategy = wrap("strategy", [&] { return parse_strategy(v); });
                 c.model.modulation = modulation_for(c.train.strategy);
               },
               [](const RunConfig& c) { return to_string(c.train.strategy); }});
  e.push_back({{"epochs", "meta-steps to train"},
               [](RunConfig& c, const std::string& v) { c.train.epochs = to_size("epochs", v); },
               [](const RunConfig& c) { return std::to_string(c.train.epochs); }});
  e.push_back({{"outer_lr", "Adam learning rate of the outer loop"},
               [](RunConfig& c, const std::string& v) { c.train.outer_lr = to_double("outer_lr", v); },
               [](const RunConfig& c) { return fmt(c.train.outer_lr); }});
  e.push_back({{"inner_lr", "inner loop step size"},
               [](RunConfig& c, const std::string& v) { c.train.inner_lr = to_double("inner_lr", v); },
               [](const RunConfig& c) { return fmt(c.train.inner_lr); }});
  e.push_back({{"inner_steps", "inner loop gradient steps"},
               [](RunConfig& c, const std::string& v) { c.train.inner_steps = to_size("inner_steps", v); },
               [](const RunConfig& c) { return std::to_string(c.train.inner_steps); }});
  e.push_back({{"inner_mode", "first_order or unrolled"},
               [](RunConfig& c, const std::string& v) {
                 c.train.inner_mode = wrap("inner_mode", [&] { return parse_inner_mode(v); });
               },
               [](const RunConfig& c) { return to_string(c.train.inner_mode); }});
  e.push_back({{"task_batch", "tasks per meta-step"},
               [](RunConfig& c, const std::string& v) { c.train.task_batch = to_size("task_batch", v); },
               [](const RunConfig& c) { return std::to_string(c.train.task_batch); }});
  e.push_back({{"support_batch", "support samples per task and step"},
               [](RunConfig& c, const std::string& v) { c.train.support_batch = to_size("support_batch", v); },
               [](const RunConfig& c) { return std::to_string(c.train.support_batch); }});
  e.push_back({{"query_batch", "query samples per task and step"},
               [](RunConfig& c, const std::string& v) { c.train.query_batch = to_size("query_batch", v); },
               [](const RunConfig& c) { return std::to_string(c.train.query_batch); }});
  e.push_back({{"loss", "complex_l1 or magnitude_l1"},
               [](RunConfig& c, const std::string& v) {
                 c.train.loss = parse_loss("loss", v);
                 c.adapt.loss = c.train.loss;
               },
               [](const RunConfig& c) { return loss_name(c.train.loss); }});
  e.push_back({{"precision", "float or double"},
               [](RunConfig& c, const std::string& v) {
                 if (v == "float") c.precision = Precision::f32;
                 else if (v == "double") c.precision = Precision::f64;
                 else throw ConfigError("precision", "expected float or double, got '" + v + "'");
               },
               [](const RunConfig& c) { return precision_name(c.precision); }});
  e.push_back(size_entry("save_interval", "epochs between checkpoints (0: only at the end)", &RunConfig::save_interval));
  e.push_back({{"adapt_mode", "adapt command mode: on_the_fly, adapt_base or adapt_hypernet"},
               [](RunConfig& c, const std::string& v) {
                 c.adapt.mode = wrap("adapt_mode", [&] { return parse_adapt_mode(v); });
               },
               [](const RunConfig& c) { return to_string(c.adapt.mode); }});
  e.push_back({{"adapt_steps", "fine-tuning gradient steps"},
               [](RunConfig& c, const std::string& v) { c.adapt.steps = to_size("adapt_steps", v); },
               [](const RunConfig& c) { return std::to_string(c.adapt.steps); }});
  e.push_back({{"adapt_lr", "fine-tuning step size"},
               [](RunConfig& c, const std::string& v) { c.adapt.lr = to_double("adapt_lr", v); },
               [](const RunConfig& c) { return fmt(c.adapt.lr); }});
  e.push_back(size_entry("cka_budget", "activation rows kept per layer for CKA", &RunConfig::cka_budget));
  e.push_back({{"seed", "master seed for data, tasks, initialization and sampling"},
               [](RunConfig& c, const std::string& v) { c.train.seed = to_u64("seed", v); },
               [](const RunConfig& c) { return std::to_string(c.train.seed); }});
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> e = build_entries();
  return e;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return e;
  }
  throw ConfigError(key, "unknown configuration key");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    const RunConfig defaults;
    for (const auto& e : entries()) out.push_back({e.key.name, e.key.help + " [" + e.get(defaults) + "]"});
    return out;
  }();
  return keys;
}

std::string config_value(const RunConfig& cfg, const std::string& key) { return find_entry(key).get(cfg); }

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Entry& e = find_entry(key);
    if (!seen.insert(key).second) throw ConfigError(key, "given more than once");
    if (value.empty()) throw ConfigError(key, "missing value");
    e.set(cfg, value);
  }
  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key.name + " = " + e.get(cfg) + "\n";
  return out;
}

void validate(const RunConfig& cfg) {
  if (cfg.contrasts.empty()) throw ConfigError("contrasts", "at least one contrast is required");
  std::set<int> ids;
  for (const auto& c : cfg.contrasts) {
    const int id = wrap("contrasts", [&] { return contrast_id(c); });
    if (!ids.insert(id).second) throw ConfigError("contrasts", "contrast '" + c + "' listed twice");
  }
  if (cfg.image_size < 16) throw ConfigError("image_size", "must be at least 16");
  wrap("image_size", [&] { require_input_size(cfg.model, cfg.image_size, cfg.image_size); });
  if (cfg.train_images < 2) throw ConfigError("train_images", "needs at least 2 images for support and query");
  if (cfg.train_images > cfg.images_per_contrast) {
    throw ConfigError("train_images", "exceeds images_per_contrast (" + std::to_string(cfg.images_per_contrast) + ")");
  }
  if (cfg.mask_types.empty()) throw ConfigError("mask_types", "at least one mask type is required");
  if (cfg.accelerations.empty()) throw ConfigError("accelerations", "at least one acceleration is required");
  for (double a : cfg.accelerations) {
    if (!(a >= 1.0) || !std::isfinite(a)) throw ConfigError("accelerations", "factors must be finite and >= 1");
  }
  for (double a : cfg.eval_accelerations) {
    if (!(a >= 1.0) || !std::isfinite(a)) throw ConfigError("eval_accelerations", "factors must be finite and >= 1");
  }
  if (!(cfg.center_fraction > 0.0 && cfg.center_fraction <= 1.0)) {
    throw ConfigError("center_fraction", "must lie in (0, 1]");
  }
  if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) throw ConfigError("split_ratio", "must lie in (0, 1)");
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma)) {
    throw ConfigError("noise_sigma", "must be finite and >= 0");
  }

  const auto& b = cfg.model.base;
  if (b.levels < 1) throw ConfigError("levels", "must be >= 1");
  if (b.channels.size() != b.levels) {
    throw ConfigError("channels", "must list " + std::to_string(b.levels) + " values (one per level)");
  }
  for (std::size_t c : b.channels) {
    if (c == 0) throw ConfigError("channels", "must be positive");
  }
  if (b.bottleneck == 0) throw ConfigError("bottleneck", "must be positive");
  if (b.kernel_size == 0 || b.kernel_size % 2 == 0) throw ConfigError("kernel_size", "must be odd");
  if (cfg.model.hyper.embed_dim == 0) throw ConfigError("embed_dim", "must be positive");
  if (cfg.model.hyper.hidden == 0) throw ConfigError("hyper_hidden", "must be positive");
  if (cfg.model.hyper.rank == 0) throw ConfigError("rank", "must be positive");
  const auto& cc = cfg.model.hyper.context_channels;
  if (cc.size() != 2 || cc[0] == 0 || cc[1] == 0) throw ConfigError("context_channels", "must list 2 positive values");
  if (!(cfg.model.aux_weight >= 0.0) || !std::isfinite(cfg.model.aux_weight)) {
    throw ConfigError("aux_weight", "must be finite and >= 0");
  }
  if (!(cfg.model.dc_lambda > 0.0)) throw ConfigError("dc_lambda", "must be > 0");
  wrap("strategy", [&] { validate(cfg.model); });

  const auto& t = cfg.train;
  if (!(t.outer_lr >= 0.0) || !std::isfinite(t.outer_lr)) throw ConfigError("outer_lr", "must be finite and >= 0");
  if (!(t.inner_lr >= 0.0) || !std::isfinite(t.inner_lr)) throw ConfigError("inner_lr", "must be finite and >= 0");
  if (t.task_batch == 0) throw ConfigError("task_batch", "must be >= 1");
  if (t.support_batch == 0) throw ConfigError("support_batch", "must be >= 1");
  if (t.query_batch == 0) throw ConfigError("query_batch", "must be >= 1");
  if (t.loss == LossKind::magnitude_l1 && t.inner_mode == InnerMode::unrolled) {
    throw ConfigError("loss", "magnitude_l1 is only supported with inner_mode = first_order");
  }
  wrap("strategy", [&] { validate(t); });

  if (!(cfg.adapt.lr >= 0.0) || !std::isfinite(cfg.adapt.lr)) throw ConfigError("adapt_lr", "must be finite and >= 0");
  if (cfg.adapt.mode == AdaptMode::adapt_hypernet && cfg.model.modulation != Modulation::kernel) {
    throw ConfigError("adapt_mode", "adapt_hypernet needs strategy = km_maml");
  }
  wrap("adapt_mode", [&] { validate(cfg.adapt); });
  if (cfg.cka_budget < 2) throw ConfigError("cka_budget", "must be >= 2");
}

}  // namespace kmaml

#pragma once

// Flat key=value run configuration shared by every command.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kmaml/meta/adaptation.hpp"
#include "kmaml/meta/trainer.hpp"
#include "kmaml/model/config.hpp"
#include "kmaml/numerics/errors.hpp"
#include "kmaml/tasks/mask.hpp"

namespace kmaml {

/// Invalid configuration; the message starts with the offending key.
class ConfigError : public ParameterError {
 public:
  ConfigError(const std::string& key, const std::string& what);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class Precision { f32, f64 };

struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::vector<std::string> contrasts{"T1", "FLAIR"};
  std::size_t images_per_contrast = 40;
  std::size_t image_size = 32;
  /// Images [0, train_images) of each contrast feed training tasks, the rest
  /// feed evaluation tasks.
  std::size_t train_images = 20;
  std::vector<MaskType> mask_types{MaskType::cartesian, MaskType::gaussian};
  std::vector<double> accelerations{4.0, 8.0};
  double center_fraction = 0.08;
  double split_ratio = 0.5;
  double noise_sigma = 0.0;
  std::vector<MaskType> eval_mask_types{MaskType::cartesian, MaskType::gaussian};
  std::vector<double> eval_accelerations{6.0};

  ModelConfig model;
  TrainConfig train;
  AdaptConfig adapt{AdaptMode::adapt_base, 10, 1e-3};
  Precision precision = Precision::f32;
  std::size_t save_interval = 50;
  std::size_t cka_budget = 2048;

  RunConfig();
};

struct ConfigKey {
  std::string name;
  std::string help;
};

/// Every accepted key in file order, for `--help`.
const std::vector<ConfigKey>& config_keys();

/// Starts from the defaults and applies each `key = value` line. Blank lines
/// and '#' comments are ignored. Unknown keys, repeated keys and bad values
/// raise ConfigError naming the key. The result is validated.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical text listing every key; parse_run_config() of it reproduces
/// the configuration.
std::string to_text(const RunConfig& cfg);

/// Cross-key checks; throws ConfigError.
void validate(const RunConfig& cfg);

/// Value of one key in canonical form.
std::string config_value(const RunConfig& cfg, const std::string& key);

}  // namespace kmaml

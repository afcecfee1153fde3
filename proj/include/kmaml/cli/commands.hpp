#pragma once

// Command implementations behind the `kmaml` executable. Each throws on
// failure; run_cli() maps exceptions to exit codes.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kmaml/cli/checkpoint.hpp"
#include "kmaml/cli/run_config.hpp"
#include "kmaml/tasks/task.hpp"

namespace kmaml {

/// Images of each contrast in manifest order.
using Dataset = std::map<std::string, std::vector<ComplexImage>>;

/// Seed of phantom `index` of a contrast.
std::uint64_t phantom_seed(std::uint64_t seed, int contrast, std::size_t index);

/// Writes `<tag>_<index>.kmr1` phantoms and manifest.json into `dir`.
void gen_data(const RunConfig& cfg, const std::filesystem::path& dir);

/// Reads manifest.json in cfg.data_dir and the rasters it lists. Only the
/// configured contrasts are loaded.
Dataset load_dataset(const RunConfig& cfg);

/// contrast x mask type x acceleration over the first train_images images.
std::vector<Task> training_tasks(const RunConfig& cfg, const Dataset& data);
/// contrast x eval mask type x eval acceleration over the remaining images.
std::vector<Task> evaluation_tasks(const RunConfig& cfg, const Dataset& data);

/// Seed of the initial parameters.
std::uint64_t init_seed(std::uint64_t seed);

/// Runs epochs [start, cfg.train.epochs), logging to `out/train_log.csv`
/// and checkpointing to `out/checkpoint.kmck`. With `resume` the state
/// comes from that checkpoint and the log is appended to.
void train(const RunConfig& cfg, const std::filesystem::path& out, bool deterministic,
           const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Throws ParameterError naming the first tensor whose shape differs from
/// what `cfg` builds, or a strategy mismatch.
void check_compatible(const RunConfig& cfg, const Checkpoint& ckpt);

/// Scores the evaluation tasks. Writes `<prefix>_metrics.csv` with one row
/// per query sample and method, and `<prefix>_summary.json`.
void evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt, const AdaptConfig& adapt,
                         const std::filesystem::path& out, const std::string& prefix);

/// Writes `cka_profile.csv` (layer, mean, std) over the training tasks.
void analyze_cka(const RunConfig& cfg, const Checkpoint& ckpt, const std::filesystem::path& out);

/// Parses arguments and runs a command. Returns 0 on success, 1 on a
/// validation or IO error and 2 on a numeric abort.
int run_cli(int argc, const char* const* argv);

}  // namespace kmaml

#include <iostream>

#include "CLI11.hpp"
#include "kmaml/cli/commands.hpp"

namespace kmaml {

namespace {

std::string config_help() {
  std::string out = "Config keys (key = value, '#' comments), default in brackets:\n";
  for (const auto& k : config_keys()) out += "  " + k.name + ": " + k.help + "\n";
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Kernel-modulated meta-learning for undersampled MRI reconstruction"};
  app.footer(config_help());
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
  app.add_option("--config", config_path, "flat key=value config file");
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_flag("--deterministic", deterministic, "reproducible outputs (wall_ms logged as 0)");
  app.add_option("--out", out, "output directory");

  auto* gen = app.add_subcommand("gen-data", "write phantom rasters and a manifest");
  auto* train_cmd = app.add_subcommand("train", "meta-train and checkpoint");
  std::string resume;
  train_cmd->add_option("--resume", resume, "continue from this checkpoint");
  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "score evaluation tasks on the fly");
  auto* adapt_cmd = app.add_subcommand("adapt", "fine-tune on each task's support set, then score");
  auto* cka_cmd = app.add_subcommand("analyze-cka", "per-layer CKA between plain and modulated activations");
  for (auto* sub : {eval_cmd, adapt_cmd, cka_cmd}) {
    sub->add_option("--checkpoint", checkpoint, "checkpoint to load (default <out>/checkpoint.kmck)");
  }
  for (auto* sub : {gen, train_cmd, eval_cmd, adapt_cmd, cka_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const bool from_file = !config_path.empty();
    RunConfig cfg = from_file ? load_run_config(config_path) : RunConfig{};
    if (seed) cfg.train.seed = *seed;
    const std::filesystem::path out_dir = out.empty() ? std::filesystem::path("out") : std::filesystem::path(out);

    if (gen->parsed()) {
      gen_data(cfg, out.empty() ? cfg.data_dir : out_dir);
    } else if (train_cmd->parsed()) {
      train(cfg, out_dir, deterministic,
            resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume));
    } else {
      const auto ckpt = load_checkpoint(checkpoint.empty() ? out_dir / "checkpoint.kmck" : std::filesystem::path(checkpoint));
      // Without --config the snapshot stored in the checkpoint is used.
      if (!from_file) {
        cfg = parse_run_config(ckpt.config_text);
        if (seed) cfg.train.seed = *seed;
      }
      if (eval_cmd->parsed()) {
        evaluate_checkpoint(cfg, ckpt, AdaptConfig{AdaptMode::on_the_fly, 0, cfg.adapt.lr, cfg.adapt.loss}, out_dir,
                            "eval");
      } else if (adapt_cmd->parsed()) {
        evaluate_checkpoint(cfg, ckpt, cfg.adapt, out_dir, "adapt");
      } else {
        analyze_cka(cfg, ckpt, out_dir);
      }
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace kmaml

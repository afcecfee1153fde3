#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "kmaml/cli/commands.hpp"
#include "kmaml/meta/evaluation.hpp"

using namespace kmaml;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("kmaml-cli-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string small_config(const fs::path& data, const std::vector<std::string>& overrides = {}) {
  std::string text = "data_dir = " + data.string() +
         "\nimages_per_contrast = 8\ntrain_images = 4\nimage_size = 16\nembed_dim = 16\n"
         "epochs = 4\ntask_batch = 2\nsupport_batch = 2\nquery_batch = 2\nsave_interval = 2\n"
         "adapt_steps = 2\ncka_budget = 64\nseed = 5\n";
  for (const auto& line : overrides) {
    const std::string key = line.substr(0, line.find(' '));
    const auto at = text.find("\n" + key + " =");
    if (at == std::string::npos) {
      text += line + "\n";
    } else {
      const auto end = text.find('\n', at + 1);
      text.replace(at + 1, end - at - 1, line);
    }
  }
  return text;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "kmaml");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(slurp(p));
  std::string line;
  while (std::getline(ss, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("config defaults round-trip through text") {
  const RunConfig defaults;
  const auto text = to_text(defaults);
  CHECK(to_text(parse_run_config(text)) == text);
  CHECK(to_text(parse_run_config("")) == text);
  CHECK(config_keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));

  auto cfg = parse_run_config("# comment\nstrategy = joint  # trailing\n\nchannels = 4, 8, 16\ndc_lambda = 2.5\n");
  CHECK(cfg.train.strategy == Strategy::joint);
  CHECK(cfg.model.modulation == Modulation::none);
  CHECK(cfg.model.base.channels == std::vector<std::size_t>{4, 8, 16});
  CHECK(cfg.model.dc_lambda == 2.5);
  CHECK(to_text(parse_run_config(to_text(cfg))) == to_text(cfg));
  CHECK(std::isinf(parse_run_config("dc_lambda = inf").model.dc_lambda));
}

TEST_CASE("rejected configs name the offending key") {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"bogus = 1", "bogus"},
      {"epochs = -3", "epochs"},
      {"epochs = 2\nepochs = 3", "epochs"},
      {"outer_lr = fast", "outer_lr"},
      {"strategy = reptile", "strategy"},
      {"inner_mode = second", "inner_mode"},
      {"mask_types = radial", "mask_types"},
      {"contrasts = T1,XX", "contrasts"},
      {"contrasts = T1,T1", "contrasts"},
      {"image_size = 20", "image_size"},
      {"channels = 8,16", "channels"},
      {"kernel_size = 4", "kernel_size"},
      {"rank = 0", "rank"},
      {"context_channels = 8", "context_channels"},
      {"train_images = 50", "train_images"},
      {"split_ratio = 1", "split_ratio"},
      {"accelerations = 0.5", "accelerations"},
      {"task_batch = 0", "task_batch"},
      {"loss = magnitude_l1\ninner_mode = unrolled", "loss"},
      {"strategy = joint\nadapt_mode = adapt_hypernet", "adapt_mode"},
      {"precision = half", "precision"},
      {"residual = maybe", "residual"},
      {"dc_lambda = 0", "dc_lambda"},
      {"epochs", "line 1"},
      {"seed =", "seed"},
  };
  for (const auto& [text, key] : cases) {
    INFO(text);
    try {
      parse_run_config(text);
      FAIL("accepted");
    } catch (const ConfigError& e) {
      CHECK(e.key() == key);
      CHECK(std::string(e.what()).starts_with(key + ":"));
    }
  }
}

TEST_CASE("checkpoint encoding is bit-exact") {
  Checkpoint ckpt;
  ckpt.strategy = "km_maml";
  ckpt.config_text = to_text(RunConfig{});
  ckpt.epoch = 17;
  ckpt.adam_step = 17;
  std::mt19937 rng(1);
  std::uniform_int_distribution<std::uint32_t> bits;
  auto random_tensor = [&](std::vector<std::size_t> shape) {
    Tensor<float> t(shape);
    for (auto& v : t.values()) {
      const std::uint32_t b = bits(rng) & 0xFF7FFFFFu;  // keep finite
      std::memcpy(&v, &b, 4);
    }
    return t;
  };
  ckpt.params.theta.emplace("conv_down_0/weight", random_tensor({8, 2, 3, 3}));
  ckpt.params.omega.emplace("conv_down_0/fc2_bias", random_tensor({10}));
  ckpt.params.ce.emplace("enc_0/bias", random_tensor({8}));
  ckpt.adam_m.emplace("theta/conv_down_0/weight", random_tensor({8, 2, 3, 3}));
  ckpt.adam_v.emplace("theta/conv_down_0/weight", random_tensor({8, 2, 3, 3}));

  TempDir dir;
  save_checkpoint(dir.path / "a.kmck", ckpt);
  const auto loaded = load_checkpoint(dir.path / "a.kmck");
  CHECK(loaded == ckpt);
  const auto& a = ckpt.params.theta.at("conv_down_0/weight");
  const auto& b = loaded.params.theta.at("conv_down_0/weight");
  CHECK(std::memcmp(a.values().data(), b.values().data(), a.numel() * 4) == 0);
  CHECK(encode_checkpoint(loaded) == slurp(dir.path / "a.kmck"));

  auto bytes = encode_checkpoint(ckpt);
  auto bumped = bytes;
  bumped[4] = 2;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bumped), doctest::Contains("version 2"), FormatError);
  CHECK_THROWS_AS(decode_checkpoint("KMCX" + bytes.substr(4)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);
}

TEST_CASE("gen-data writes rasters and a manifest deterministically") {
  TempDir dir;
  RunConfig cfg;
  REQUIRE(cfg.contrasts.size() == 2);
  REQUIRE(cfg.images_per_contrast == 40);
  gen_data(cfg, dir.path / "a");
  gen_data(cfg, dir.path / "b");
  std::size_t rasters = 0;
  for (const auto& e : fs::directory_iterator(dir.path / "a")) {
    if (e.path().extension() == ".kmr1") {
      ++rasters;
      CHECK(slurp(e.path()) == slurp(dir.path / "b" / e.path().filename()));
    }
  }
  CHECK(rasters == 80);
  const auto manifest = slurp(dir.path / "a" / "manifest.json");
  CHECK(manifest == slurp(dir.path / "b" / "manifest.json"));
  CHECK(manifest.find("\"tag\": \"T1\"") != std::string::npos);
  CHECK(manifest.find("\"tag\": \"FLAIR\"") != std::string::npos);
  CHECK(manifest.find("\"tag\": \"T2\"") == std::string::npos);
}

TEST_CASE("train, eval, adapt and analyze-cka") {
  TempDir dir;
  const auto cfg_path = dir.path / "run.cfg";
  write(cfg_path, small_config(dir.path / "data"));
  const auto cfg = load_run_config(cfg_path);
  REQUIRE(cli({"--config", cfg_path.string(), "gen-data"}) == 0);

  SUBCASE("zero epochs checkpoint the initialization") {
    write(cfg_path, small_config(dir.path / "data", {"epochs = 0", "save_interval = 0"}));
    const auto zero = load_run_config(cfg_path);
    REQUIRE(cli({"--config", cfg_path.string(), "train", "--out", (dir.path / "z").string()}) == 0);
    const auto ckpt = load_checkpoint(dir.path / "z" / "checkpoint.kmck");
    CHECK(ckpt.params == init_parameters<float>(zero.model, init_seed(zero.train.seed)));
    CHECK(ckpt.epoch == 0);
    CHECK(ckpt.adam_m.empty());
    CHECK(read_csv(dir.path / "z" / "train_log.csv").size() == 1);
  }

  SUBCASE("log rows, determinism and resume") {
    REQUIRE(cli({"--config", cfg_path.string(), "--deterministic", "--out", (dir.path / "a").string(), "train"}) == 0);
    REQUIRE(cli({"--config", cfg_path.string(), "--deterministic", "--out", (dir.path / "b").string(), "train"}) == 0);
    const auto log = read_csv(dir.path / "a" / "train_log.csv");
    CHECK(log.size() == 1 + cfg.train.epochs * cfg.train.task_batch);
    CHECK(log[0] == std::vector<std::string>{"epoch", "task", "support_loss", "query_loss", "wall_ms"});
    CHECK(log[1][4] == "0");
    CHECK(slurp(dir.path / "a" / "train_log.csv") == slurp(dir.path / "b" / "train_log.csv"));
    CHECK(slurp(dir.path / "a" / "checkpoint.kmck") == slurp(dir.path / "b" / "checkpoint.kmck"));

    // Two epochs, then resume to four.
    auto half = cfg;
    half.train.epochs = 2;
    train(half, dir.path / "r", true);
    train(cfg, dir.path / "r", true, dir.path / "r" / "checkpoint.kmck");
    const auto full = load_checkpoint(dir.path / "a" / "checkpoint.kmck");
    const auto resumed = load_checkpoint(dir.path / "r" / "checkpoint.kmck");
    CHECK(resumed.params == full.params);
    CHECK(resumed.adam_m == full.adam_m);
    CHECK(resumed.adam_v == full.adam_v);
    CHECK(resumed.epoch == 4);
    CHECK(slurp(dir.path / "r" / "train_log.csv") == slurp(dir.path / "a" / "train_log.csv"));
  }

  SUBCASE("evaluation outputs") {
    const auto run = (dir.path / "run").string();
    REQUIRE(cli({"--config", cfg_path.string(), "--deterministic", "--out", run, "train"}) == 0);
    REQUIRE(cli({"--out", run, "eval"}) == 0);
    const auto first = slurp(dir.path / "run" / "eval_metrics.csv");
    REQUIRE(cli({"--config", cfg_path.string(), "--out", run, "eval"}) == 0);
    CHECK(slurp(dir.path / "run" / "eval_metrics.csv") == first);

    // Summary means recomputed from the CSV.
    const auto rows = read_csv(dir.path / "run" / "eval_metrics.csv");
    std::map<std::pair<std::string, std::string>, std::vector<double>> psnr;
    for (std::size_t i = 1; i < rows.size(); ++i) psnr[{rows[i][0], rows[i][2]}].push_back(std::stod(rows[i][3]));
    const auto summary = slurp(dir.path / "run" / "eval_summary.json");
    const auto ckpt = load_checkpoint(dir.path / "run" / "checkpoint.kmck");
    const auto tasks = evaluation_tasks(cfg, load_dataset(cfg));
    CHECK(psnr.size() == 2 * tasks.size());
    const auto report = evaluate(cfg.model, ckpt.params, tasks, AdaptConfig{AdaptMode::on_the_fly, 0, 1e-3});
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const auto& v = psnr[{tasks[t].id, "model"}];
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      CHECK(std::abs(mean - report.model_summary[t].psnr_mean) < 1e-9);
      CHECK(summary.find("\"task\": \"" + tasks[t].id + "\"") != std::string::npos);
    }
    CHECK(summary.find("zero_filled") != std::string::npos);

    // Fine-tuning with zero steps reproduces the on-the-fly metrics.
    write(dir.path / "zero.cfg", small_config(dir.path / "data", {"adapt_steps = 0"}));
    REQUIRE(cli({"--config", (dir.path / "zero.cfg").string(), "--out", run, "adapt"}) == 0);
    CHECK(slurp(dir.path / "run" / "adapt_metrics.csv") == first);
    REQUIRE(cli({"--config", cfg_path.string(), "--out", run, "adapt"}) == 0);
    CHECK(read_csv(dir.path / "run" / "adapt_metrics.csv").size() == rows.size());

    // Shape mismatch between config and checkpoint.
    write(dir.path / "wide.cfg", small_config(dir.path / "data", {"bottleneck = 32"}));
    CHECK(cli({"--config", (dir.path / "wide.cfg").string(), "--out", run, "eval"}) == 1);
    auto wide = load_run_config(dir.path / "wide.cfg");
    CHECK_THROWS_WITH_AS(check_compatible(wide, ckpt), doctest::Contains("incompatible"), ParameterError);
  }

  SUBCASE("cka profile") {
    auto zero = cfg;
    zero.train.epochs = 0;
    train(zero, dir.path / "init", true);
    REQUIRE(cli({"--out", (dir.path / "init").string(), "analyze-cka"}) == 0);
    const auto rows = read_csv(dir.path / "init" / "cka_profile.csv");
    REQUIRE(rows.size() == 8);
    const std::vector<std::string> order{"conv_down_0",  "conv_down_1", "conv_down_2", "latent_layer",
                                         "conv_up_0",    "conv_up_1",   "conv_up_2"};
    for (std::size_t i = 0; i < order.size(); ++i) {
      CHECK(rows[i + 1][0] == order[i]);
      CHECK(std::stod(rows[i + 1][1]) == doctest::Approx(1.0).epsilon(1e-12));
    }
    REQUIRE(cli({"--config", cfg_path.string(), "--out", (dir.path / "t").string(), "train"}) == 0);
    REQUIRE(cli({"--out", (dir.path / "t").string(), "analyze-cka"}) == 0);
    const auto trained = read_csv(dir.path / "t" / "cka_profile.csv");
    CHECK(trained.size() == 8);
    for (std::size_t i = 1; i < trained.size(); ++i) {
      const double v = std::stod(trained[i][1]);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("exit codes") {
  TempDir dir;
  CHECK(cli({"--help"}) == 0);
  CHECK(cli({}) == 1);
  CHECK(cli({"launch"}) == 1);
  write(dir.path / "bad.cfg", "learning_rate = 1\n");
  CHECK(cli({"--config", (dir.path / "bad.cfg").string(), "train"}) == 1);
  const auto cfg_path = dir.path / "run.cfg";
  write(cfg_path, small_config(dir.path / "missing"));
  CHECK(cli({"--config", cfg_path.string(), "--out", (dir.path / "o").string(), "train"}) == 1);
  CHECK(cli({"--out", (dir.path / "nothing").string(), "eval"}) == 1);

  // A diverging run aborts with code 2 and keeps its last checkpoint.
  write(cfg_path, small_config(dir.path / "data", {"outer_lr = 1e38", "save_interval = 1", "epochs = 50"}));
  REQUIRE(cli({"--config", cfg_path.string(), "gen-data"}) == 0);
  CHECK(cli({"--config", cfg_path.string(), "--out", (dir.path / "o").string(), "train"}) == 2);
  const auto ckpt = load_checkpoint(dir.path / "o" / "checkpoint.kmck");
  CHECK(ckpt.epoch < 50);
}

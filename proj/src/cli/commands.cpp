#include "kmaml/cli/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "kmaml/meta/evaluation.hpp"
#include "kmaml/metrics/cka.hpp"
#include "kmaml/tasks/phantom.hpp"
#include "kmaml/tasks/raster_io.hpp"

namespace kmaml {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string image_name(const std::string& tag, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%03zu.kmr1", index);
  return tag + buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream os(path, std::ios::binary | mode);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

template <typename U, typename T>
TensorMap<U> cast_map(const TensorMap<T>& m) {
  TensorMap<U> out;
  for (const auto& [name, t] : m) {
    Tensor<U> c(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) c[i] = static_cast<U>(t[i]);
    out.emplace(name, std::move(c));
  }
  return out;
}

std::vector<Task> make_tasks(const RunConfig& cfg, const Dataset& data, const std::vector<MaskType>& types,
                             const std::vector<double>& accs, std::size_t first, std::size_t last,
                             std::uint64_t stream) {
  std::vector<Task> tasks;
  for (const auto& tag : cfg.contrasts) {
    const auto& images = data.at(tag);
    std::span<const ComplexImage> subset(images.data() + first, last - first);
    for (MaskType type : types) {
      for (double acc : accs) {
        const MaskSpec spec{type, acc, cfg.center_fraction};
        tasks.push_back(
            build_task(subset, tag, spec, cfg.split_ratio, derive_seed(cfg.train.seed, stream + tasks.size()),
                       cfg.noise_sigma));
      }
    }
  }
  return tasks;
}

template <typename T>
void train_impl(const RunConfig& cfg, const fs::path& out, bool deterministic,
                const std::optional<fs::path>& resume) {
  const auto tasks = training_tasks(cfg, load_dataset(cfg));
  TrainState<T> st;
  if (resume) {
    const Checkpoint ckpt = load_checkpoint(*resume);
    check_compatible(cfg, ckpt);
    st.params = ckpt.params.cast<T>();
    st.adam.restore(ckpt.adam_step, cast_map<T>(ckpt.adam_m), cast_map<T>(ckpt.adam_v));
    st.epoch = ckpt.epoch;
  } else {
    st.params = init_parameters<T>(cfg.model, init_seed(cfg.train.seed));
  }

  ensure_dir(out);
  const fs::path log_path = out / "train_log.csv";
  const fs::path ckpt_path = out / "checkpoint.kmck";
  const bool append = resume.has_value() && fs::exists(log_path);
  auto log = open_out(log_path, append ? std::ios::app : std::ios::trunc);
  if (!append) log << "epoch,task,support_loss,query_loss,wall_ms\n";

  auto save = [&] {
    Checkpoint ckpt;
    ckpt.strategy = to_string(cfg.train.strategy);
    ckpt.config_text = to_text(cfg);
    ckpt.epoch = st.epoch;
    ckpt.adam_step = st.adam.step();
    ckpt.params = st.params.template cast<float>();
    ckpt.adam_m = cast_map<float>(st.adam.first_moments());
    ckpt.adam_v = cast_map<float>(st.adam.second_moments());
    save_checkpoint(ckpt_path, ckpt);
  };

  if (!resume) save();
  while (st.epoch < cfg.train.epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<TaskLog> logs;
    try {
      logs = meta_train_epoch(cfg.model, cfg.train, tasks, st);
    } catch (const NumericError&) {
      log.flush();
      throw;
    }
    const double ms =
        deterministic ? 0.0
                      : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& l : logs) {
      log << l.epoch << ',' << l.task << ',' << num(l.support_loss) << ',' << num(l.query_loss) << ',' << num(ms)
          << '\n';
    }
    log.flush();
    if (cfg.save_interval > 0 && st.epoch % cfg.save_interval == 0) save();
  }
  save();
}

json summary_json(const MetricSummary& s) {
  return {{"psnr_mean", s.psnr_mean}, {"psnr_std", s.psnr_std}, {"ssim_mean", s.ssim_mean}, {"ssim_std", s.ssim_std}};
}

template <typename T>
EvalReport evaluate_impl(const RunConfig& cfg, const Checkpoint& ckpt, const AdaptConfig& adapt) {
  const auto tasks = evaluation_tasks(cfg, load_dataset(cfg));
  return evaluate(cfg.model, ckpt.params.cast<T>(), tasks, adapt);
}

}  // namespace

std::uint64_t phantom_seed(std::uint64_t seed, int contrast, std::size_t index) {
  return derive_seed(derive_seed(seed, 0x47440000ULL + static_cast<std::uint64_t>(contrast)), index);
}

std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, 0x494e4954ULL); }

void gen_data(const RunConfig& cfg, const fs::path& dir) {
  ensure_dir(dir);
  json manifest;
  manifest["format"] = "KMR1";
  manifest["height"] = cfg.image_size;
  manifest["width"] = cfg.image_size;
  manifest["seed"] = cfg.train.seed;
  manifest["contrasts"] = json::array();
  for (const auto& tag : cfg.contrasts) {
    const int id = contrast_id(tag);
    json entry{{"tag", tag}, {"id", id}, {"images", json::array()}};
    for (std::size_t i = 0; i < cfg.images_per_contrast; ++i) {
      const auto seed = phantom_seed(cfg.train.seed, id, i);
      const std::string file = image_name(tag, i);
      save_image(dir / file, generate_phantom(seed, id, cfg.image_size, cfg.image_size));
      entry["images"].push_back({{"file", file}, {"seed", seed}});
    }
    manifest["contrasts"].push_back(entry);
  }
  open_out(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset load_dataset(const RunConfig& cfg) {
  const fs::path path = cfg.data_dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw IoError("dataset manifest missing: " + path.string() + " (run gen-data first)");
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  Dataset data;
  try {
    for (const auto& entry : manifest.at("contrasts")) {
      const std::string tag = entry.at("tag");
      if (std::find(cfg.contrasts.begin(), cfg.contrasts.end(), tag) == cfg.contrasts.end()) continue;
      auto& images = data[tag];
      for (const auto& img : entry.at("images")) {
        images.push_back(load_image(cfg.data_dir / img.at("file").get<std::string>()));
        const auto& x = images.back();
        if (x.height != cfg.image_size || x.width != cfg.image_size) {
          throw ConfigError("image_size", "dataset image " + img.at("file").get<std::string>() + " is " +
                                              std::to_string(x.height) + "x" + std::to_string(x.width));
        }
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  for (const auto& tag : cfg.contrasts) {
    auto it = data.find(tag);
    if (it == data.end()) throw ConfigError("contrasts", "contrast " + tag + " not in " + path.string());
    if (it->second.size() < cfg.train_images) {
      throw ConfigError("train_images", "contrast " + tag + " has only " + std::to_string(it->second.size()) +
                                            " images");
    }
  }
  return data;
}

std::vector<Task> training_tasks(const RunConfig& cfg, const Dataset& data) {
  return make_tasks(cfg, data, cfg.mask_types, cfg.accelerations, 0, cfg.train_images, 0x54520000ULL);
}

std::vector<Task> evaluation_tasks(const RunConfig& cfg, const Dataset& data) {
  std::size_t available = data.at(cfg.contrasts.front()).size();
  for (const auto& [tag, images] : data) available = std::min(available, images.size());
  if (available < cfg.train_images + 2) {
    throw ConfigError("train_images", "leaves fewer than 2 evaluation images per contrast");
  }
  if (cfg.eval_mask_types.empty() || cfg.eval_accelerations.empty()) {
    throw ConfigError("eval_accelerations", "no evaluation tasks configured");
  }
  return make_tasks(cfg, data, cfg.eval_mask_types, cfg.eval_accelerations, cfg.train_images, available,
                    0x45560000ULL);
}

void train(const RunConfig& cfg, const fs::path& out, bool deterministic, const std::optional<fs::path>& resume) {
  if (cfg.precision == Precision::f32) {
    train_impl<float>(cfg, out, deterministic, resume);
  } else {
    train_impl<double>(cfg, out, deterministic, resume);
  }
}

void check_compatible(const RunConfig& cfg, const Checkpoint& ckpt) {
  if (ckpt.strategy != to_string(cfg.train.strategy)) {
    throw ParameterError("checkpoint incompatible with config: checkpoint strategy " + ckpt.strategy +
                         ", config strategy " + to_string(cfg.train.strategy));
  }
  const auto expected = init_parameters<float>(cfg.model, 0).flatten();
  const auto actual = ckpt.params.flatten();
  auto shape_text = [](const Tensor<float>& t) {
    std::string s;
    for (std::size_t d : t.shape()) s += (s.empty() ? "" : "x") + std::to_string(d);
    return s;
  };
  for (const auto& [name, t] : expected) {
    auto it = actual.find(name);
    if (it == actual.end()) throw ParameterError("checkpoint incompatible with config: missing tensor " + name);
    if (it->second.shape() != t.shape()) {
      throw ParameterError("checkpoint incompatible with config: tensor " + name + " is " + shape_text(it->second) +
                           ", config expects " + shape_text(t));
    }
  }
  for (const auto& [name, t] : actual) {
    if (!expected.contains(name)) {
      throw ParameterError("checkpoint incompatible with config: unexpected tensor " + name);
    }
  }
}

void evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt, const AdaptConfig& adapt, const fs::path& out,
                         const std::string& prefix) {
  check_compatible(cfg, ckpt);
  const EvalReport report = cfg.precision == Precision::f32 ? evaluate_impl<float>(cfg, ckpt, adapt)
                                                              : evaluate_impl<double>(cfg, ckpt, adapt);
  ensure_dir(out);
  auto csv = open_out(out / (prefix + "_metrics.csv"));
  csv << "task,sample,method,psnr,ssim\n";
  for (const auto* rows : {&report.model, &report.zero_filled}) {
    const char* method = rows == &report.model ? "model" : "zero_filled";
    for (const auto& m : *rows) {
      csv << m.task << ',' << m.sample << ',' << method << ',' << num(m.psnr) << ',' << num(m.ssim) << '\n';
    }
  }

  json summary;
  summary["strategy"] = ckpt.strategy;
  summary["epoch"] = ckpt.epoch;
  summary["mode"] = to_string(adapt.mode);
  summary["steps"] = adapt.mode == AdaptMode::on_the_fly ? 0 : adapt.steps;
  summary["lr"] = adapt.lr;
  summary["tasks"] = json::array();
  for (std::size_t i = 0; i < report.model_summary.size(); ++i) {
    const auto& m = report.model_summary[i];
    summary["tasks"].push_back({{"task", m.task},
                                {"count", m.count},
                                {"model", summary_json(m)},
                                {"zero_filled", summary_json(report.zero_filled_summary[i])}});
  }
  open_out(out / (prefix + "_summary.json")) << summary.dump(2) << '\n';
}

void analyze_cka(const RunConfig& cfg, const Checkpoint& ckpt, const fs::path& out) {
  if (cfg.model.modulation == Modulation::none) {
    throw ConfigError("strategy", to_string(cfg.train.strategy) + " has no modulation to analyze");
  }
  check_compatible(cfg, ckpt);
  const auto tasks = training_tasks(cfg, load_dataset(cfg));
  const auto profile = cka_profile(cfg.model, ckpt.params.cast<double>(), tasks, cfg.cka_budget);
  ensure_dir(out);
  auto csv = open_out(out / "cka_profile.csv");
  csv << "layer,mean,std\n";
  for (std::size_t i = 0; i < profile.layers.size(); ++i) {
    csv << profile.layers[i] << ',' << num(profile.mean[i]) << ',' << num(profile.std[i]) << '\n';
  }
}

}  // namespace kmaml

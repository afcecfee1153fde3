#include "kmaml/meta/evaluation.hpp"

#include <cmath>
#include <map>

#include "kmaml/metrics/image_quality.hpp"
#include "kmaml/numerics/errors.hpp"

namespace kmaml {

std::vector<MetricSummary> summarize(const std::vector<SampleMetric>& samples) {
  std::vector<MetricSummary> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<const SampleMetric*>> groups;
  for (const auto& s : samples) {
    auto [it, inserted] = index.try_emplace(s.task, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(&s);
  }
  for (const auto& g : groups) {
    MetricSummary m;
    m.task = g.front()->task;
    m.count = g.size();
    const double n = static_cast<double>(g.size());
    for (const auto* s : g) {
      m.psnr_mean += s->psnr;
      m.ssim_mean += s->ssim;
    }
    m.psnr_mean /= n;
    m.ssim_mean /= n;
    for (const auto* s : g) {
      m.psnr_std += (s->psnr - m.psnr_mean) * (s->psnr - m.psnr_mean);
      m.ssim_std += (s->ssim - m.ssim_mean) * (s->ssim - m.ssim_mean);
    }
    m.psnr_std = std::sqrt(m.psnr_std / n);
    m.ssim_std = std::sqrt(m.ssim_std / n);
    out.push_back(m);
  }
  return out;
}

template <typename T>
std::vector<double> magnitude(const Tensor<T>& x, std::size_t index) {
  if (x.rank() != 4 || x.dim(1) != 2) throw DimensionError("magnitude: expected [N,2,H,W]");
  const std::size_t plane = x.dim(2) * x.dim(3);
  const T* re = x.data() + index * 2 * plane;
  const T* im = re + plane;
  std::vector<double> out(plane);
  for (std::size_t i = 0; i < plane; ++i) out[i] = std::hypot(static_cast<double>(re[i]), static_cast<double>(im[i]));
  return out;
}

template <typename T>
EvalReport evaluate(const ModelConfig& model, const ParameterSet<T>& params, const std::vector<Task>& tasks,
                    const AdaptConfig& adapt) {
  EvalReport report;
  for (const auto& task : tasks) {
    if (task.query.empty()) throw ParameterError("evaluate: task " + task.id + " has no query samples");
    ad::ScopedLabel label("evaluate " + task.id);
    AdaptedModel<T> adapted{params, {}, {}};
    if (adapt.mode != AdaptMode::on_the_fly) adapted = finetune(model, params, make_batch<T>(task.support), adapt);
    // The whole query set is one batch, so the embedding is task-level.
    const Batch<T> batch = make_batch<T>(task.query);
    const Tensor<T> rec = reconstruct_adapted(model, adapted, batch);
    const std::size_t h = batch.x_fs.dim(2), w = batch.x_fs.dim(3);
    for (std::size_t q = 0; q < task.query.size(); ++q) {
      const auto target = magnitude(batch.x_fs, q);
      const auto pred = magnitude(rec, q);
      const auto zf = magnitude(batch.x_us, q);
      const std::size_t id = task.query[q].image_index;
      report.model.push_back({task.id, id, psnr(pred, target), ssim(pred, target, h, w)});
      report.zero_filled.push_back({task.id, id, psnr(zf, target), ssim(zf, target, h, w)});
    }
  }
  report.model_summary = summarize(report.model);
  report.zero_filled_summary = summarize(report.zero_filled);
  return report;
}

template std::vector<double> magnitude(const Tensor<float>&, std::size_t);
template std::vector<double> magnitude(const Tensor<double>&, std::size_t);
template EvalReport evaluate(const ModelConfig&, const ParameterSet<float>&, const std::vector<Task>&,
                             const AdaptConfig&);
template EvalReport evaluate(const ModelConfig&, const ParameterSet<double>&, const std::vector<Task>&,
                             const AdaptConfig&);

}  // namespace kmaml

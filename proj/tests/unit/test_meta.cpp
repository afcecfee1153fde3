#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "kmaml/meta/evaluation.hpp"
#include "kmaml/meta/trainer.hpp"
#include "kmaml/metrics/image_quality.hpp"
#include "kmaml/numerics/errors.hpp"
#include "kmaml/numerics/finite_difference.hpp"
#include "kmaml/numerics/ops.hpp"
#include "model_fixtures.hpp"

using namespace kmaml;
using kmaml::testing::jittered_parameters;
using kmaml::testing::micro_config;
using kmaml::testing::random_task;
using kmaml::testing::relative_error;

namespace {

TrainConfig micro_train(Strategy s, std::size_t steps = 1) {
  TrainConfig t;
  t.strategy = s;
  t.inner_steps = steps;
  t.inner_lr = 0.05;
  t.outer_lr = 1e-3;
  t.task_batch = 2;
  t.support_batch = 2;
  t.query_batch = 2;
  t.seed = 3;
  return t;
}

std::vector<Task> micro_tasks(std::uint64_t seed) {
  return {random_task(4, 16, MaskSpec{MaskType::gaussian, 2.0, 0.08}, seed),
          random_task(4, 16, MaskSpec{MaskType::cartesian, 2.0, 0.08}, seed + 1)};
}

ParameterSet<double> with_group(ParameterSet<double> p, const std::string& group, const TensorMap<double>& values) {
  (group == "omega" ? p.omega : p.theta) = values;
  return p;
}

// Prefixed subset of a flat map.
TensorMap<double> subset(const TensorMap<double>& flat, const std::string& prefix) {
  TensorMap<double> out;
  for (const auto& [name, t] : flat) {
    if (name.starts_with(prefix)) out.emplace(name.substr(prefix.size()), t);
  }
  return out;
}

// Central differences, falling back to a one-sided difference at coordinates where
// the objective jumps (the inner gradient is discontinuous at ReLU and L1 kinks).
// The side used is the one whose h and h/2 estimates agree.
template <typename F>
TensorMap<double> piecewise_fd(F f, const TensorMap<double>& x, double h, std::size_t& jumps) {
  TensorMap<double> out;
  for (const auto& [name, t] : x) {
    Tensor<double> g(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      auto at = [&](double d) {
        auto y = x;
        y[name][i] += d;
        return f(y);
      };
      const double f0 = at(0.0), fp = at(h), fm = at(-h);
      const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
      if (std::abs(fwd - bwd) <= 1e-2 * std::max(1e-3, std::abs(fwd) + std::abs(bwd))) {
        g[i] = (fp - fm) / (2 * h);
        continue;
      }
      ++jumps;
      const double fwd2 = (at(h / 2) - f0) / (h / 2), bwd2 = (f0 - at(-h / 2)) / (h / 2);
      g[i] = std::abs(fwd - fwd2) < std::abs(bwd - bwd2) ? 2 * fwd2 - fwd : 2 * bwd2 - bwd;
    }
    out.emplace(name, g);
  }
  return out;
}

double max_abs(const TensorMap<double>& a, const TensorMap<double>& b) {
  double m = 0.0;
  for (const auto& [name, t] : a) {
    const auto& u = b.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(t[i] - u[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("adam matches a hand-computed oracle") {
  Adam<double> adam;
  TensorMap<double> p{{"w", Tensor<double>({2}, {1.0, -2.0})}};
  const double g1[] = {0.5, -0.25}, g2[] = {-0.1, 0.3};
  adam.update(p, {{"w", Tensor<double>({2}, {g1[0], g1[1]})}}, 0.01);
  adam.update(p, {{"w", Tensor<double>({2}, {g2[0], g2[1]})}}, 0.01);
  const double init[] = {1.0, -2.0};
  for (int i = 0; i < 2; ++i) {
    double x = init[i], m = 0, v = 0;
    const double gs[] = {g1[i], g2[i]};
    for (int t = 1; t <= 2; ++t) {
      m = 0.9 * m + 0.1 * gs[t - 1];
      v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
      x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(std::abs(p["w"][i] - x) < 1e-15);
  }
  CHECK(adam.step() == 2);
  CHECK_THROWS_AS(adam.update(p, {{"q", Tensor<double>({1})}}, 0.1), DimensionError);
}

TEST_CASE("strategy and mode parsing is total") {
  for (auto s : {Strategy::joint, Strategy::maml, Strategy::mmaml, Strategy::km_maml}) {
    CHECK(parse_strategy(to_string(s)) == s);
  }
  CHECK(modulation_for(Strategy::km_maml) == Modulation::kernel);
  CHECK(modulation_for(Strategy::mmaml) == Modulation::scalar);
  CHECK(modulation_for(Strategy::maml) == Modulation::none);
  CHECK(modulation_for(Strategy::joint) == Modulation::none);
  CHECK_THROWS_AS(parse_strategy("reptile"), ParameterError);
  CHECK(parse_inner_mode("unrolled") == InnerMode::unrolled);
  CHECK_THROWS_AS(parse_inner_mode("second"), ParameterError);
  CHECK(parse_adapt_mode("adapt_hypernet") == AdaptMode::adapt_hypernet);
  CHECK_THROWS_AS(parse_adapt_mode("none"), ParameterError);

  TrainConfig bad;
  bad.task_batch = 0;
  CHECK_THROWS_AS(validate(bad), ParameterError);
  bad = TrainConfig{};
  bad.loss = LossKind::magnitude_l1;
  bad.inner_mode = InnerMode::unrolled;
  CHECK_THROWS_AS(validate(bad), ParameterError);
}

TEST_CASE("episode sampling") {
  auto tasks = micro_tasks(1);
  tasks.push_back(random_task(6, 16, MaskSpec{MaskType::gaussian, 4.0, 0.08}, 9));
  auto cfg = micro_train(Strategy::km_maml);
  auto a = sample_episodes<double>(tasks, cfg, 5);
  auto b = sample_episodes<double>(tasks, cfg, 5);
  REQUIRE(a.size() == 2);
  CHECK(a[0].task != a[1].task);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].task == b[i].task);
    CHECK(a[i].support.x_us == b[i].support.x_us);
    CHECK(a[i].support.size() == 2);
  }
  std::set<const Task*> seen;
  for (std::size_t e = 0; e < 20; ++e) {
    for (const auto& ep : sample_episodes<double>(tasks, cfg, e)) seen.insert(ep.task);
  }
  CHECK(seen.size() == 3);
  CHECK_THROWS_AS(sample_episodes<double>({}, cfg, 0), ParameterError);
}

TEST_CASE("inner loop degeneracies") {
  auto model = micro_config();
  auto p = jittered_parameters(model, 1);
  auto batch = make_batch<double>(micro_tasks(2)[0].support);
  auto cfg = micro_train(Strategy::km_maml, 0);
  CHECK(inner_adapt(model, cfg, p, batch).adapted == p.omega);
  cfg.inner_steps = 3;
  cfg.inner_lr = 0.0;
  auto r = inner_adapt(model, cfg, p, batch);
  CHECK(r.adapted == p.omega);
  CHECK(r.losses.size() == 3);
  CHECK_THROWS_AS(inner_adapt(model, micro_train(Strategy::joint), p, batch), ParameterError);
}

TEST_CASE("inner loop leaves base network and encoder untouched") {
  auto model = micro_config();
  const auto p = jittered_parameters(model, 2);
  const auto before = p;
  auto tasks = micro_tasks(3);
  auto cfg = micro_train(Strategy::km_maml, 2);
  inner_adapt(model, cfg, p, make_batch<double>(tasks[0].support));
  meta_gradient(model, cfg, p, sample_episodes<double>(tasks, cfg, 0));
  CHECK(p.theta == before.theta);
  CHECK(p.ce == before.ce);
  CHECK(p.omega == before.omega);
}

TEST_CASE("one inner step equals a finite-difference gradient step") {
  for (auto strategy : {Strategy::km_maml, Strategy::maml, Strategy::mmaml}) {
    INFO(to_string(strategy));
    auto model = micro_config(modulation_for(strategy));
    auto p = jittered_parameters(model, 4);
    auto batch = make_batch<double>(micro_tasks(5)[0].support);
    auto cfg = micro_train(strategy, 1);
    const std::string group = adapted_group(strategy);
    const auto& start = group == "omega" ? p.omega : p.theta;
    auto adapted = inner_adapt(model, cfg, p, batch).adapted;

    auto fd = finite_difference_grad<double>(
        [&](const TensorMap<double>& values) {
          ad::NoGradGuard guard;
          auto q = with_group(p, group, values);
          return reconstruction_loss(run_pipeline(model, make_vars(q), batch).x_rec, batch).value()[0];
        },
        start, 1e-5);
    TensorMap<double> delta, expected;
    for (const auto& [name, t] : start) {
      Tensor<double> d(t.shape()), e(t.shape());
      for (std::size_t i = 0; i < t.numel(); ++i) {
        d[i] = adapted.at(name)[i] - t[i];
        e[i] = -cfg.inner_lr * fd.at(name)[i];
      }
      delta.emplace(name, d);
      expected.emplace(name, e);
    }
    CHECK(relative_error(delta, expected) < 1e-4);
  }
}

TEST_CASE("first-order meta-gradient is the query gradient at the adapted weights") {
  auto model = micro_config();
  auto p = jittered_parameters(model, 6);
  auto cfg = micro_train(Strategy::km_maml, 2);
  cfg.task_batch = 1;
  auto tasks = micro_tasks(7);
  auto episodes = sample_episodes<double>(tasks, cfg, 0);
  auto mg = meta_gradient(model, cfg, p, episodes);

  const auto& ep = episodes[0];
  auto adapted = inner_adapt(model, cfg, p, ep.support).adapted;
  auto vars = make_vars(p);
  vars.omega = ad::make_leaves(adapted, true);
  auto gamma = context_embed(ad::Var<double>::constant(ep.support.x_us), vars.ce, model).gamma;
  PipelineOptions<double> opts;
  opts.gamma = &gamma;
  auto loss = reconstruction_loss(run_pipeline(model, vars, ep.query, opts).x_rec, ep.query);
  auto g = ad::values_of(ad::grad(loss, vars.omega));
  CHECK(max_abs(subset(mg.grads, "omega/"), g) < 1e-14);
}

TEST_CASE("unrolled meta-gradient matches finite differences of the bi-level objective") {
  for (auto strategy : {Strategy::km_maml, Strategy::maml, Strategy::mmaml}) {
    INFO(to_string(strategy));
    auto model = micro_config(modulation_for(strategy));
    auto p = jittered_parameters(model, 8);
    auto cfg = micro_train(strategy, 2);
    cfg.inner_mode = InnerMode::unrolled;
    auto tasks = micro_tasks(9);
    auto episodes = sample_episodes<double>(tasks, cfg, 0);
    auto mg = meta_gradient(model, cfg, p, episodes);
    auto flat = p.flatten();
    TensorMap<double> trained;
    for (const auto& [name, t] : flat) {
      if (mg.grads.contains(name)) trained.emplace(name, t);
    }
    CHECK(trained.size() == mg.grads.size());
    std::size_t jumps = 0;
    auto fd = piecewise_fd(
        [&](const TensorMap<double>& values) {
          auto all = flat;
          for (const auto& [name, t] : values) all[name] = t;
          return meta_gradient(model, cfg, ParameterSet<double>::unflatten(all), episodes).objective;
        },
        trained, 1e-5, jumps);
    INFO("coordinates with a jump: " << jumps);
    CHECK(jumps * 10 < parameter_count(trained));
    CHECK(relative_error(mg.grads, fd) < 1e-3);
  }
}

TEST_CASE("learning rates of zero leave parameters unchanged") {
  for (auto strategy : {Strategy::joint, Strategy::maml, Strategy::mmaml, Strategy::km_maml}) {
    auto model = micro_config(modulation_for(strategy));
    auto cfg = micro_train(strategy, 2);
    cfg.outer_lr = 0.0;
    cfg.inner_lr = 0.0;
    TrainState<double> st{jittered_parameters(model, 10), {}, 0};
    const auto before = st.params;
    auto logs = meta_train_epoch(model, cfg, micro_tasks(11), st);
    CHECK(logs.size() == 2);
    CHECK(st.params == before);
    CHECK(st.epoch == 1);
  }
}

TEST_CASE("kernel meta-learning without inner steps reduces to joint training") {
  ModelConfig km = micro_config(Modulation::kernel);
  ModelConfig plain = micro_config(Modulation::none);
  auto km_params = init_parameters<double>(km, 12);
  auto joint_params = init_parameters<double>(plain, 12);
  REQUIRE(km_params.theta == joint_params.theta);

  auto tasks = std::vector<Task>{random_task(6, 16, MaskSpec{MaskType::gaussian, 2.0, 0.08}, 13)};
  auto km_cfg = micro_train(Strategy::km_maml, 0);
  km_cfg.task_batch = 1;
  km_cfg.query_batch = 3;
  auto episodes = sample_episodes<double>(tasks, km_cfg, 0);
  auto km_grad = meta_gradient(km, km_cfg, km_params, episodes);

  // Joint step whose pooled batch is exactly the query batch (twice).
  auto joint_cfg = km_cfg;
  joint_cfg.strategy = Strategy::joint;
  std::vector<Episode<double>> pooled{{episodes[0].task, episodes[0].query, episodes[0].query}};
  auto joint_grad = meta_gradient(plain, joint_cfg, joint_params, pooled);

  Adam<double> a, b;
  auto km_flat = km_params.flatten();
  auto joint_flat = joint_params.flatten();
  a.update(km_flat, km_grad.grads, 1e-3);
  b.update(joint_flat, joint_grad.grads, 1e-3);
  TensorMap<double> km_delta, joint_delta;
  for (const auto& [name, t] : subset(km_flat, "theta/")) {
    Tensor<double> d1(t.shape()), d2(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      d1[i] = t[i] - km_params.theta.at(name)[i];
      d2[i] = joint_flat.at("theta/" + name)[i] - joint_params.theta.at(name)[i];
    }
    km_delta.emplace(name, d1);
    joint_delta.emplace(name, d2);
  }
  CHECK(max_abs(km_delta, joint_delta) < 1e-9);
}

TEST_CASE("joint step equals a direct single-level Adam step") {
  auto model = micro_config(Modulation::none);
  auto cfg = micro_train(Strategy::joint);
  auto tasks = micro_tasks(14);
  TrainState<double> st{jittered_parameters(model, 15), {}, 0};
  const auto start = st.params;
  meta_train_epoch(model, cfg, tasks, st);

  // Oracle: pooled batch, one loss, one Adam step written out by hand.
  auto episodes = sample_episodes<double>(tasks, cfg, 0);
  Batch<double> pooled = episodes[0].support;
  pooled = concat_batches(pooled, episodes[0].query);
  for (std::size_t i = 1; i < episodes.size(); ++i) {
    pooled = concat_batches(pooled, episodes[i].support);
    pooled = concat_batches(pooled, episodes[i].query);
  }
  auto leaves = ad::make_leaves(start.theta, true);
  ModelVars<double> vars{leaves, {}, {}, {}};
  auto g = ad::values_of(ad::grad(reconstruction_loss(run_pipeline(model, vars, pooled).x_rec, pooled), leaves));
  double worst = 0.0;
  for (const auto& [name, t] : start.theta) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double gi = g.at(name)[i];
      const double m = 0.1 * gi / 0.1;
      const double v = 0.001 * gi * gi / 0.001;
      const double expected = t[i] - cfg.outer_lr * m / (std::sqrt(v) + 1e-8);
      worst = std::max(worst, std::abs(st.params.theta.at(name)[i] - expected));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("small inner steps do not increase the support loss") {
  ModelConfig model;
  model.hyper.embed_dim = 16;
  auto p = init_parameters<double>(model, 16);
  std::mt19937_64 rng(17);
  kmaml::testing::jitter(p.omega, rng, 0.05);
  int improved = 0, total = 0;
  for (int c = 0; c < 2; ++c) {
    for (auto type : {MaskType::cartesian, MaskType::gaussian}) {
      for (double acc : {4.0, 8.0}) {
        auto task = kmaml::testing::phantom_task(4, c, 32, MaskSpec{type, acc, 0.08}, 20 + total);
        auto cfg = micro_train(Strategy::km_maml, 2);
        cfg.inner_lr = 1e-3;
        auto r = inner_adapt(model, cfg, p, make_batch<double>(task.support));
        improved += r.losses[1] <= r.losses[0];
        ++total;
      }
    }
  }
  CHECK(improved * 10 >= total * 9);
}

TEST_CASE("fine-tuning degeneracies") {
  auto model = micro_config();
  auto p = jittered_parameters(model, 18);
  auto task = micro_tasks(19)[0];
  auto support = make_batch<double>(task.support);
  auto query = make_batch<double>(task.query);

  auto fly = finetune(model, p, support, AdaptConfig{AdaptMode::on_the_fly, 5, 0.1});
  CHECK(fly.params == p);
  CHECK(reconstruct_adapted(model, fly, query) == reconstruct(model, p, query));

  auto base0 = finetune(model, p, support, AdaptConfig{AdaptMode::adapt_base, 0, 0.1});
  auto gamma = context_embed(ad::Var<double>::constant(support.x_us), make_vars(p).ce, model).gamma.value();
  ad::NoGradGuard guard;
  auto theta_mod = ad::values_of(modulated_weights(model, make_vars(p), ad::Var<double>::constant(gamma)));
  CHECK(adapted_base_weights(model, base0, gamma) == theta_mod);
  CHECK(reconstruct_adapted(model, base0, query) == reconstruct(model, p, query));

  auto hyper0 = finetune(model, p, support, AdaptConfig{AdaptMode::adapt_hypernet, 0, 0.1});
  CHECK(hyper0.params == p);
  CHECK_THROWS_AS(finetune(micro_config(Modulation::none), init_parameters<double>(micro_config(Modulation::none), 1),
                           support, AdaptConfig{AdaptMode::adapt_hypernet, 1, 0.1}),
                  ParameterError);
}

TEST_CASE("one fine-tuning step matches finite differences") {
  auto model = micro_config();
  auto p = jittered_parameters(model, 20);
  auto support = make_batch<double>(micro_tasks(21)[0].support);
  const double lr = 0.05;

  auto hyper = finetune(model, p, support, AdaptConfig{AdaptMode::adapt_hypernet, 1, lr});
  auto fd = finite_difference_grad<double>(
      [&](const TensorMap<double>& omega) {
        ad::NoGradGuard guard;
        auto q = p;
        q.omega = omega;
        return reconstruction_loss(run_pipeline(model, make_vars(q), support).x_rec, support).value()[0];
      },
      p.omega, 1e-5);
  TensorMap<double> delta, expected;
  for (const auto& [name, t] : p.omega) {
    Tensor<double> d(t.shape()), e(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      d[i] = hyper.params.omega.at(name)[i] - t[i];
      e[i] = -lr * fd.at(name)[i];
    }
    delta.emplace(name, d);
    expected.emplace(name, e);
  }
  CHECK(relative_error(delta, expected) < 1e-4);

  auto base = finetune(model, p, support, AdaptConfig{AdaptMode::adapt_base, 1, lr});
  TensorMap<double> zero;
  for (const auto& [name, t] : p.theta) zero.emplace(name, Tensor<double>(t.shape()));
  auto fd_base = finite_difference_grad<double>(
      [&](const TensorMap<double>& delta_values) {
        ad::NoGradGuard guard;
        auto d = ad::make_constants(delta_values);
        PipelineOptions<double> opts;
        opts.theta_delta = &d;
        return reconstruction_loss(run_pipeline(model, make_vars(p), support, opts).x_rec, support).value()[0];
      },
      zero, 1e-5);
  TensorMap<double> expected_base;
  for (const auto& [name, t] : fd_base) {
    Tensor<double> e(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) e[i] = -lr * t[i];
    expected_base.emplace(name, e);
  }
  CHECK(relative_error(base.theta_delta, expected_base) < 1e-4);
}

TEST_CASE("evaluation report") {
  ModelConfig model;
  auto p = init_parameters<float>(model, 22);
  std::vector<Task> tasks{kmaml::testing::phantom_task(5, 0, 32, MaskSpec{MaskType::cartesian, 4.0, 0.08}, 23),
                          kmaml::testing::phantom_task(5, 1, 32, MaskSpec{MaskType::gaussian, 8.0, 0.08}, 24)};
  auto report = evaluate(model, p, tasks, AdaptConfig{AdaptMode::on_the_fly, 0, 1e-3});
  REQUIRE(report.model.size() == tasks[0].query.size() + tasks[1].query.size());
  REQUIRE(report.model_summary.size() == 2);

  // Zero-filled rows score the undersampled input itself.
  const auto& s = tasks[0].query[0];
  auto zf = s.x_us.magnitude();
  auto target = s.x_fs.magnitude();
  CHECK(report.zero_filled[0].psnr == doctest::Approx(psnr(zf, target)).epsilon(1e-6));
  CHECK(report.zero_filled[0].ssim == doctest::Approx(ssim(zf, target, 32, 32)).epsilon(1e-6));

  double mean = 0.0;
  for (std::size_t i = 0; i < tasks[0].query.size(); ++i) mean += report.model[i].psnr;
  mean /= static_cast<double>(tasks[0].query.size());
  CHECK(std::abs(report.model_summary[0].psnr_mean - mean) < 1e-12);

  auto again = evaluate(model, p, tasks, AdaptConfig{AdaptMode::on_the_fly, 0, 1e-3});
  for (std::size_t i = 0; i < report.model.size(); ++i) {
    CHECK(report.model[i].psnr == again.model[i].psnr);
    CHECK(report.model[i].ssim == again.model[i].ssim);
  }
  auto adapted0 = evaluate(model, p, tasks, AdaptConfig{AdaptMode::adapt_base, 0, 1e-3});
  for (std::size_t i = 0; i < report.model.size(); ++i) CHECK(adapted0.model[i].psnr == report.model[i].psnr);
}

TEST_CASE("non-finite training values name epoch and task") {
  auto model = micro_config(Modulation::none);
  auto cfg = micro_train(Strategy::joint);
  TrainState<double> st{init_parameters<double>(model, 25), {}, 0};
  for (auto& v : st.params.theta.at("conv_down_0/weight").values()) v = std::numeric_limits<double>::infinity();
  try {
    meta_train_epoch(model, cfg, micro_tasks(26), st);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("task") != std::string::npos);
  }
}

TEST_CASE("two-mode phantom training reduces the query loss") {
  ModelConfig model;
  TrainConfig cfg;
  cfg.seed = 1;
  std::vector<Task> tasks;
  for (int c : {0, 1}) {
    auto images = kmaml::testing::phantoms(12, c, 32, 500 + 100 * static_cast<std::uint64_t>(c));
    for (auto type : {MaskType::cartesian, MaskType::gaussian}) {
      for (double acc : {4.0, 8.0}) {
        tasks.push_back(build_task(images, c == 0 ? "T1" : "FLAIR", MaskSpec{type, acc, 0.08}, 0.5, tasks.size()));
      }
    }
  }
  REQUIRE(tasks.size() == 8);
  TrainState<float> st{init_parameters<float>(model, 1), {}, 0};
  auto mean_query = [](const std::vector<TaskLog>& logs) {
    double q = 0.0;
    for (const auto& l : logs) q += l.query_loss;
    return q / static_cast<double>(logs.size());
  };
  const double first = mean_query(meta_train_epoch(model, cfg, tasks, st));
  double last = 0.0;
  for (int e = 1; e < 50; ++e) {
    auto logs = meta_train_epoch(model, cfg, tasks, st);
    if (e >= 45) last += mean_query(logs) / 5.0;
  }
  INFO("first " << first << " last " << last);
  CHECK(last < 0.5 * first);
}

#include <cmath>
#include <complex>
#include <random>

#include "doctest.h"
#include "kmaml/numerics/errors.hpp"
#include "kmaml/numerics/finite_difference.hpp"
#include "kmaml/numerics/fourier.hpp"
#include "kmaml/numerics/ops.hpp"
#include "test_support.hpp"

using namespace kmaml;
using kmaml::testing::gradient_check;
using kmaml::testing::random_tensor;
using V = ad::Var<double>;
using VM = ad::VarMap<double>;

namespace {

// Weighted sum with a fixed random tensor so every output element matters.
V probe(const V& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum_all(ad::mul_const(out, random_tensor(out.shape(), rng)));
}

// Checks d/dp <grad f(p), v> (computed by differentiating the backward graph)
// against central differences of <grad f(p), v>.
double second_order_check(const std::function<V(const VM&)>& f, const TensorMap<double>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TensorMap<double> dirs;
  for (const auto& [name, t] : params) dirs.emplace(name, random_tensor(t.shape(), rng));
  auto directional = [&](const VM& leaves, bool create_graph) {
    auto g = ad::grad(f(leaves), leaves, create_graph);
    V total;
    for (const auto& [name, gv] : g) {
      V term = ad::sum_all(ad::mul_const(gv, dirs.at(name)));
      total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
  };
  auto leaves = ad::make_leaves(params, true);
  auto hvp = ad::values_of(ad::grad(directional(leaves, true), leaves));
  auto fd = finite_difference_grad<double>(
      [&](const TensorMap<double>& p) { return directional(ad::make_leaves(p, true), false).value()[0]; }, params,
      1e-5);
  return kmaml::testing::relative_error(hvp, fd);
}

// Direct O(N^2) unitary DFT of a real-valued impulse image.
std::vector<std::complex<double>> direct_dft(const std::vector<std::complex<double>>& x, std::size_t h, std::size_t w) {
  std::vector<std::complex<double>> out(h * w);
  const double pi = std::acos(-1.0);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double angle = -2 * pi * (double(u * y) / h + double(v * xx) / w);
          acc += x[y * w + xx] * std::complex<double>(std::cos(angle), std::sin(angle));
        }
      out[u * w + v] = acc / std::sqrt(double(h * w));
    }
  return out;
}

}  // namespace

TEST_CASE("conv of ones with ones kernel sums the 3x3 footprint") {
  auto x = V::constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  auto w = V::constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  auto y = ad::conv2d(x, w, {1, 1});
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.value().at(0, 0, 1, 1) == 9.0);
  CHECK(y.value().at(0, 0, 0, 0) == 4.0);
}

TEST_CASE("elementwise product rule") {
  auto a = V::leaf(Tensor<double>::scalar(2.0));
  auto b = V::leaf(Tensor<double>::scalar(3.0));
  auto g = ad::grad(ad::mul(a, b), std::vector<V>{a, b});
  CHECK(g[0].value()[0] == 3.0);
  CHECK(g[1].value()[0] == 2.0);
}

TEST_CASE("L1 subgradient is the sign of the residual") {
  auto x = V::leaf(Tensor<double>::scalar(0.5));
  auto t = V::constant(Tensor<double>::scalar(0.2));
  auto g = ad::grad(ad::l1_loss(x, t), std::vector<V>{x});
  CHECK(g[0].value()[0] == 1.0);
}

TEST_CASE("shape mismatch names both operands") {
  auto a = V::constant(Tensor<double>(Shape{2, 3}));
  auto b = V::constant(Tensor<double>(Shape{3, 2}));
  try {
    ad::add(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::conv2d(V::constant(Tensor<double>(Shape{1, 2, 4, 4})),
                             V::constant(Tensor<double>(Shape{1, 3, 3, 3})), {1, 1}),
                  DimensionError);
}

TEST_CASE("non-finite results are surfaced with the active label") {
  auto a = V::constant(Tensor<double>::scalar(1e308));
  ad::ScopedLabel label("conv_down_1");
  try {
    ad::scale(a, 10.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("conv_down_1") != std::string::npos);
  }
}

TEST_CASE("gradients of every primitive match central differences") {
  std::mt19937_64 rng(11);
  const kernels::ConvGeometry same{1, 1}, down{2, 1};

  SUBCASE("conv2d stride 1 and stride 2") {
    TensorMap<double> p{{"x", random_tensor({2, 3, 6, 6}, rng)}, {"w", random_tensor({4, 3, 3, 3}, rng)}};
    CHECK(gradient_check([&](const VM& v) { return probe(ad::conv2d(v.at("x"), v.at("w"), same), 1); }, p) < 1e-4);
    CHECK(gradient_check([&](const VM& v) { return probe(ad::conv2d(v.at("x"), v.at("w"), down), 2); }, p) < 1e-4);
  }
  SUBCASE("conv adjoints") {
    TensorMap<double> p{{"gy", random_tensor({2, 4, 3, 3}, rng)}, {"w", random_tensor({4, 3, 3, 3}, rng)}};
    CHECK(gradient_check([&](const VM& v) { return probe(ad::conv2d_input_grad(v.at("gy"), v.at("w"), down, 6, 6), 3); },
                         p) < 1e-4);
    TensorMap<double> q{{"x", random_tensor({2, 3, 6, 6}, rng)}, {"gy", random_tensor({2, 4, 3, 3}, rng)}};
    CHECK(gradient_check([&](const VM& v) { return probe(ad::conv2d_weight_grad(v.at("x"), v.at("gy"), down, 3), 4); },
                         q) < 1e-4);
  }
  SUBCASE("upsample then convolve") {
    TensorMap<double> p{{"x", random_tensor({1, 2, 3, 3}, rng)}, {"w", random_tensor({3, 2, 3, 3}, rng)}};
    CHECK(gradient_check([&](const VM& v) { return probe(ad::conv2d(ad::upsample2(v.at("x")), v.at("w"), same), 5); },
                         p) < 1e-4);
  }
  SUBCASE("affine map, relu, bias and spatial mean") {
    TensorMap<double> p{{"x", random_tensor({3, 5}, rng)}, {"w", random_tensor({4, 5}, rng)},
                        {"b", random_tensor({4}, rng)}};
    CHECK(gradient_check([&](const VM& v) { return probe(ad::relu(ad::linear(v.at("x"), v.at("w"), v.at("b"))), 6); },
                         p) < 1e-4);
    TensorMap<double> q{{"x", random_tensor({2, 3, 4, 4}, rng)}, {"b", random_tensor({3}, rng)}};
    CHECK(gradient_check([&](const VM& v) { return probe(ad::mean_spatial(ad::add_channel_bias(v.at("x"), v.at("b"))), 7); },
                         q) < 1e-4);
  }
  SUBCASE("elementwise add, multiply, scale_by") {
    TensorMap<double> p{{"a", random_tensor({2, 3}, rng)}, {"b", random_tensor({2, 3}, rng)},
                        {"s", random_tensor({1}, rng)}};
    CHECK(gradient_check(
              [&](const VM& v) {
                return probe(ad::scale_by(ad::add(ad::mul(v.at("a"), v.at("b")), v.at("a")), v.at("s")), 8);
              },
              p) < 1e-4);
  }
  SUBCASE("matrix product and kernel expansion") {
    TensorMap<double> p{{"beta", random_tensor({4, 2}, rng)}, {"alpha", random_tensor({2, 3}, rng)},
                        {"theta", random_tensor({4, 3, 3, 3}, rng)}};
    CHECK(gradient_check(
              [&](const VM& v) {
                auto w = ad::matmul(v.at("beta"), v.at("alpha"));
                return probe(ad::mul(v.at("theta"), ad::expand_kernel(w, 3)), 9);
              },
              p) < 1e-4);
  }
  SUBCASE("concat, slice, reshape") {
    TensorMap<double> p{{"a", random_tensor({2, 3, 2, 2}, rng)}, {"b", random_tensor({2, 1, 2, 2}, rng)}};
    CHECK(gradient_check(
              [&](const VM& v) {
                auto c = ad::concat_dim1(v.at("a"), v.at("b"));
                return probe(ad::reshape(ad::slice_dim1(c, 1, 3), Shape{6, 4}), 10);
              },
              p) < 1e-4);
  }
  SUBCASE("L1 loss and Fourier pair") {
    TensorMap<double> p{{"x", random_tensor({2, 2, 4, 6}, rng)}};
    auto target = V::constant(random_tensor({2, 2, 4, 6}, rng));
    CHECK(gradient_check([&](const VM& v) { return ad::l1_loss(ad::idft2(ad::dft2(v.at("x"))), target); }, p) < 1e-4);
    CHECK(gradient_check([&](const VM& v) { return probe(ad::dft2(v.at("x")), 12); }, p) < 1e-4);
  }
  SUBCASE("complex magnitude") {
    TensorMap<double> p{{"x", random_tensor({1, 2, 3, 3}, rng)}};
    CHECK(gradient_check([&](const VM& v) { return probe(ad::complex_magnitude(v.at("x")), 13); }, p) < 1e-4);
  }
}

TEST_CASE("differentiating backward graphs matches differences of gradients") {
  std::mt19937_64 rng(21);
  TensorMap<double> p{{"x", random_tensor({1, 2, 4, 4}, rng)},
                      {"w1", random_tensor({3, 2, 3, 3}, rng)},
                      {"w2", random_tensor({2, 3, 3, 3}, rng)},
                      {"b", random_tensor({3}, rng)}};
  auto target = V::constant(random_tensor({1, 2, 4, 4}, rng));
  auto f = [&](const VM& v) {
    auto h = ad::relu(ad::add_channel_bias(ad::conv2d(v.at("x"), v.at("w1"), {2, 1}), v.at("b")));
    auto y = ad::conv2d(ad::upsample2(h), v.at("w2"), {1, 1});
    auto r = ad::idft2(ad::dft2(y));
    return ad::add(ad::sum_all(ad::mul(r, r)), ad::l1_loss(r, target));
  };
  CHECK(second_order_check(f, p, 5) < 1e-4);
}

TEST_CASE("unitary DFT") {
  std::mt19937_64 rng(3);
  SUBCASE("inverse identity and Parseval at 16x16") {
    auto x = random_tensor({1, 2, 16, 16}, rng);
    auto k = kernels::dft2(x);
    auto back = kernels::idft2(k);
    double max_err = 0, ex = 0, ek = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      max_err = std::max(max_err, std::abs(back[i] - x[i]));
      ex += x[i] * x[i];
      ek += k[i] * k[i];
    }
    CHECK(max_err < 1e-10);
    CHECK(std::abs(ex - ek) / ex < 1e-10);
  }
  SUBCASE("zeros map to zeros") {
    auto k = kernels::dft2(Tensor<double>(Shape{1, 2, 8, 8}));
    for (double v : k.values()) CHECK(v == 0.0);
  }
  SUBCASE("unit impulse at the origin spreads to 1/8 on 8x8") {
    ComplexImage img(8, 8);
    img.real[0] = 1.0;
    auto k = dft2(img);
    std::vector<std::complex<double>> xs(64);
    xs[0] = 1.0;
    auto oracle = direct_dft(xs, 8, 8);
    for (std::size_t i = 0; i < 64; ++i) {
      CHECK(std::abs(k.real[i] - 0.125) < 1e-14);
      CHECK(std::abs(k.imag[i]) < 1e-14);
      CHECK(std::abs(k.real[i] - oracle[i].real()) < 1e-12);
    }
  }
  SUBCASE("non-square random input matches the direct DFT") {
    auto x = random_tensor({1, 2, 6, 10}, rng);
    std::vector<std::complex<double>> xs(60);
    for (std::size_t i = 0; i < 60; ++i) xs[i] = {x[i], x[60 + i]};
    auto oracle = direct_dft(xs, 6, 10);
    auto k = kernels::dft2(x);
    for (std::size_t i = 0; i < 60; ++i) {
      CHECK(std::abs(k[i] - oracle[i].real()) < 1e-12);
      CHECK(std::abs(k[60 + i] - oracle[i].imag()) < 1e-12);
    }
  }
}

TEST_CASE("finite_difference_grad") {
  SUBCASE("quadratic") {
    TensorMap<double> p{{"p", Tensor<double>::scalar(3.0)}};
    auto g = finite_difference_grad<double>([](const TensorMap<double>& m) { return m.at("p")[0] * m.at("p")[0]; }, p,
                                            1e-5);
    CHECK(std::abs(g.at("p")[0] - 6.0) < 1e-8);
  }
  SUBCASE("constant function") {
    std::mt19937_64 rng(1);
    TensorMap<double> p{{"a", random_tensor({3, 2}, rng)}};
    auto g = finite_difference_grad<double>([](const TensorMap<double>&) { return 4.0; }, p, 1e-5);
    for (double v : g.at("a").values()) CHECK(v == 0.0);
  }
  SUBCASE("errors") {
    TensorMap<double> p{{"a", Tensor<double>::scalar(1.0)}};
    CHECK_THROWS_AS(finite_difference_grad<double>([](const TensorMap<double>&) { return NAN; }, p, 1e-5),
                    NumericError);
    CHECK_THROWS_AS(finite_difference_grad<double>([](const TensorMap<double>&) { return 0.0; }, p, 0.0),
                    ParameterError);
  }
}

TEST_CASE("micro-network L1 reconstruction loss: reverse mode vs differences") {
  std::mt19937_64 rng(7);
  TensorMap<double> p{{"w1", random_tensor({4, 2, 3, 3}, rng, -0.5, 0.5)},
                      {"b1", random_tensor({4}, rng, -0.1, 0.1)},
                      {"w2", random_tensor({2, 6, 3, 3}, rng, -0.5, 0.5)},
                      {"b2", random_tensor({2}, rng, -0.1, 0.1)}};
  std::size_t count = 0;
  for (const auto& [n, t] : p) count += t.numel();
  REQUIRE(count <= 500);
  auto x = V::constant(random_tensor({2, 2, 8, 8}, rng));
  auto target = V::constant(random_tensor({2, 2, 8, 8}, rng));
  auto loss = [&](const VM& v) {
    auto h = ad::relu(ad::add_channel_bias(ad::conv2d(x, v.at("w1"), {2, 1}), v.at("b1")));
    auto up = ad::concat_dim1(ad::upsample2(h), x);
    auto y = ad::add(x, ad::add_channel_bias(ad::conv2d(up, v.at("w2"), {1, 1}), v.at("b2")));
    return ad::l1_loss(y, target);
  };
  CHECK(gradient_check(loss, p) < 1e-4);
}

TEST_CASE("operations are deterministic") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto w = random_tensor({5, 3, 3, 3}, rng);
  auto a = kernels::conv2d(x, w, {2, 1});
  auto b = kernels::conv2d(x, w, {2, 1});
  CHECK(a == b);
}

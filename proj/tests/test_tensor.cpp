#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>

#include "layerlab/errors.hpp"
#include "layerlab/rng.hpp"
#include "layerlab/tensor.hpp"

using namespace layerlab;

namespace {

Tensor sum_all(const Tensor& t) {
  Tensor left = Tensor::full({1, t.dim(0)}, 1.0);
  Tensor right = Tensor::full({t.dim(1), 1}, 1.0);
  return matmul(matmul(left, t), right);
}

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  std::vector<double> data(static_cast<size_t>(n));
  for (double& v : data) v = rng.gaussian();
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Central finite differences against the recorded tape, relative error scaled
// by max(1, |analytic|, |numeric|).
double fd_check(std::vector<Tensor> leaves, const std::function<Tensor()>& build,
                double h = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  Tensor loss = build();
  loss.backward();
  double worst = 0.0;
  for (auto& l : leaves) {
    std::vector<double> analytic(l.raw().size(), 0.0);
    if (!l.grad().empty()) analytic.assign(l.grad().begin(), l.grad().end());
    auto x = l.raw();
    for (size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      double fp, fm;
      {
        NoGradGuard ng;
        x[i] = orig + h;
        fp = build().item();
        x[i] = orig - h;
        fm = build().item();
        x[i] = orig;
      }
      const double num = (fp - fm) / (2.0 * h);
      const double rel =
          std::abs(analytic[i] - num) / std::max({1.0, std::abs(analytic[i]), std::abs(num)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity leaves the operand unchanged") {
  Rng rng(7);
  Tensor a = random_tensor(rng, {3, 3}, false);
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor out = matmul(eye, a);
  for (int i = 0; i < 9; ++i) CHECK(out.values()[i] == a.values()[i]);
}

TEST_CASE("matmul hand-computed 2x2 case") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {0, 1});
  Tensor out = matmul(a, b);
  CHECK(out.values()[0] == 2.0);
  CHECK(out.values()[1] == 4.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients match finite differences on 5x4 * 4x3") {
  Rng rng(11);
  Tensor a = random_tensor(rng, {5, 4});
  Tensor b = random_tensor(rng, {4, 3});
  const double err = fd_check({a, b}, [&] { return sum_all(matmul(a, b)); });
  CHECK(err < 1e-6);
}

TEST_CASE("softmax of symmetric inputs") {
  Tensor out = softmax(Tensor::from_data({2}, {0.0, 0.0}), 0);
  CHECK(out.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.values()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax survives large inputs via max subtraction") {
  Tensor out = softmax(Tensor::from_data({2}, {1000.0, 1000.0}), 0);
  CHECK(out.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.values()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax matches extended-precision evaluation") {
  Tensor out = softmax(Tensor::from_data({3}, {1.0, 2.0, 3.0}), 0);
  long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
  long double sum = e1 + e2 + e3;
  CHECK(std::abs(out.values()[0] - static_cast<double>(e1 / sum)) < 1e-14);
  CHECK(std::abs(out.values()[1] - static_cast<double>(e2 / sum)) < 1e-14);
  CHECK(std::abs(out.values()[2] - static_cast<double>(e3 / sum)) < 1e-14);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor(rng, {4, 6}, false);
    Tensor s = softmax(x, 1);
    for (int64_t i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (int64_t j = 0; j < 6; ++j) {
        const double v = s.values()[i * 6 + j];
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    const double c = rng.uniform(-5.0, 5.0);
    std::vector<double> shifted(x.values().begin(), x.values().end());
    for (double& v : shifted) v += c;
    Tensor s2 = softmax(Tensor::from_data({4, 6}, std::move(shifted)), 1);
    for (size_t i = 0; i < s.values().size(); ++i)
      CHECK(s.values()[i] == doctest::Approx(s2.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax axis bounds checked") {
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), ShapeError);
}

TEST_CASE("softmax gradients match finite differences") {
  Rng rng(5);
  Tensor x = random_tensor(rng, {3, 5});
  Tensor w = random_tensor(rng, {5, 1}, false);
  const double err = fd_check({x}, [&] { return sum_all(matmul(softmax(x, 1), w)); });
  CHECK(err < 1e-6);
}

TEST_CASE("layer_norm maps constant rows to the bias") {
  Tensor x = Tensor::from_data({1, 3}, {5.0, 5.0, 5.0});
  Tensor g = Tensor::full({3}, 1.0);
  Tensor b = Tensor::zeros({3});
  Tensor out = layer_norm(x, g, b, 1e-5);
  for (int i = 0; i < 3; ++i) CHECK(out.values()[i] == 0.0);
}

TEST_CASE("layer_norm leaves normalized rows nearly unchanged") {
  Tensor x = Tensor::from_data({1, 2}, {1.0, -1.0});
  Tensor out = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-5);
  CHECK(std::abs(out.values()[0] - 1.0) < 1e-4);
  CHECK(std::abs(out.values()[1] + 1.0) < 1e-4);
}

TEST_CASE("layer_norm rejects non-positive eps") {
  CHECK_THROWS_AS(
      layer_norm(Tensor::zeros({1, 2}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 0.0),
      ShapeError);
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(13);
  Tensor x = random_tensor(rng, {4, 6});
  Tensor g = random_tensor(rng, {6});
  Tensor b = random_tensor(rng, {6});
  Tensor w = random_tensor(rng, {6, 1}, false);
  const double err =
      fd_check({x, g, b}, [&] { return sum_all(matmul(layer_norm(x, g, b, 1e-5), w)); });
  CHECK(err < 1e-6);
}

TEST_CASE("attention with a single key-value pair returns v for any query") {
  Rng rng(17);
  Tensor q = random_tensor(rng, {4, 8}, false);
  Tensor k = random_tensor(rng, {1, 8}, false);
  Tensor v = random_tensor(rng, {1, 8}, false);
  Tensor mask = Tensor::zeros({4, 1});
  Tensor out = multi_head_attention(q, k, v, mask, 2);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 8; ++j)
      CHECK(out.values()[i * 8 + j] == v.values()[j]);
}

TEST_CASE("fully masked rows except self attend only to themselves") {
  Rng rng(19);
  const int64_t n = 5, d = 4;
  Tensor q = random_tensor(rng, {n, d}, false);
  Tensor k = random_tensor(rng, {n, d}, false);
  Tensor v = random_tensor(rng, {n, d}, false);
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(static_cast<size_t>(n * n), ninf);
  for (int64_t i = 0; i < n; ++i) m[static_cast<size_t>(i * n + i)] = 0.0;
  Tensor out = multi_head_attention(q, k, v, Tensor::from_data({n, n}, std::move(m)), 2);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      CHECK(out.values()[i * d + j] == v.values()[i * d + j]);
}

TEST_CASE("attention rejects a mask of the wrong shape") {
  Tensor q = Tensor::zeros({3, 4});
  Tensor k = Tensor::zeros({2, 4});
  Tensor v = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(multi_head_attention(q, k, v, Tensor::zeros({3, 3}), 2), ShapeError);
  CHECK_THROWS_AS(multi_head_attention(q, k, v, Tensor::zeros({2, 2}), 3), ShapeError);
}

TEST_CASE("attention gradients match finite differences through a mask") {
  Rng rng(23);
  const int64_t n = 4, d = 6;
  Tensor q = random_tensor(rng, {n, d});
  Tensor k = random_tensor(rng, {n, d});
  Tensor v = random_tensor(rng, {n, d});
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(static_cast<size_t>(n * n), 0.0);
  m[1] = ninf;  // row 0 may not attend to key 1
  m[2] = ninf;
  Tensor mask = Tensor::from_data({n, n}, std::move(m));
  Tensor w = random_tensor(rng, {d, 1}, false);
  const double err = fd_check(
      {q, k, v}, [&] { return sum_all(matmul(multi_head_attention(q, k, v, mask, 3), w)); });
  CHECK(err < 1e-5);
}

TEST_CASE("gelu, elementwise, slicing and gather gradients match finite differences") {
  Rng rng(29);
  Tensor a = random_tensor(rng, {5, 4});
  Tensor b = random_tensor(rng, {5, 4});
  Tensor bias = random_tensor(rng, {4});
  const double err = fd_check({a, b, bias}, [&] {
    Tensor x = add_rowvec(mul(gelu(a), b), bias);
    Tensor top = slice_rows(x, 0, 3);
    Tensor bottom = slice_rows(x, 3, 2);
    Tensor g = gather_rows(concat_rows({bottom, top}), {4, 1, 0, 2, 3});
    Tensor left = slice_cols(g, 0, 2);
    Tensor right = slice_cols(g, 2, 2);
    Tensor merged = concat_cols({scale(right, 1.7), left});
    return sum_all(sub(mean_rows(merged), transpose(Tensor::zeros({4, 1}))));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("cross entropy matches finite differences and ln 2 at zero logits") {
  Rng rng(31);
  Tensor logits = random_tensor(rng, {6, 2});
  std::vector<int> labels = {0, 1, 1, 0, 1, 0};
  const double err = fd_check({logits}, [&] { return cross_entropy_with_logits(logits, labels); });
  CHECK(err < 1e-6);

  Tensor zero = Tensor::zeros({4, 2});
  CHECK(cross_entropy_with_logits(zero, {0, 1, 0, 1}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("forward passes are bit-deterministic") {
  Rng rng(37);
  Tensor x = random_tensor(rng, {6, 8}, false);
  Tensor g = random_tensor(rng, {8}, false);
  Tensor b = random_tensor(rng, {8}, false);
  auto run = [&] {
    Tensor out = softmax(layer_norm(gelu(x), g, b, 1e-5), 1);
    return std::vector<double>(out.values().begin(), out.values().end());
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("every differentiable op passes randomized finite-difference checks") {
  Rng rng(41);
  for (int rep = 0; rep < 3; ++rep) {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    CHECK(fd_check({a, b}, [&] { return sum_all(matmul(a, b)); }) < 1e-5);

    Tensor c = random_tensor(rng, {2, 5});
    CHECK(fd_check({c}, [&] { return sum_all(softmax(c, 1)); }) < 1e-5);
    CHECK(fd_check({c}, [&] { return sum_all(gelu(c)); }) < 1e-5);
    CHECK(fd_check({c}, [&] { return sum_all(transpose(c)); }) < 1e-5);
    CHECK(fd_check({c}, [&] { return sum_all(scale(c, -2.5)); }) < 1e-5);
    CHECK(fd_check({c}, [&] { return sum_all(mean_rows(c)); }) < 1e-5);

    Tensor d = random_tensor(rng, {2, 5});
    CHECK(fd_check({c, d}, [&] { return sum_all(add(c, d)); }) < 1e-5);
    CHECK(fd_check({c, d}, [&] { return sum_all(sub(c, d)); }) < 1e-5);
    CHECK(fd_check({c, d}, [&] { return sum_all(mul(c, d)); }) < 1e-5);

    Tensor g = random_tensor(rng, {5});
    Tensor bias = random_tensor(rng, {5});
    CHECK(fd_check({c, g, bias}, [&] { return sum_all(layer_norm(c, g, bias, 1e-5)); }) < 1e-5);
    CHECK(fd_check({c, bias}, [&] { return sum_all(add_rowvec(c, bias)); }) < 1e-5);
  }
}

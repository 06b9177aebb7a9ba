#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "layerlab/errors.hpp"
#include "layerlab/metrics.hpp"
#include "layerlab/prior.hpp"
#include "layerlab/rng.hpp"
#include "support/oracles.hpp"

using namespace layerlab;

TEST_CASE("sample_task is deterministic in (prior, stream)") {
  TaskPrior prior;
  prior.seed = 99;
  Table a = sample_task(prior, 7);
  Table b = sample_task(prior, 7);
  CHECK(a.x.rows == b.x.rows);
  CHECK(a.x.v == b.x.v);
  CHECK(a.y == b.y);
  Table c = sample_task(prior, 8);
  CHECK(a.x.v != c.x.v);
}

TEST_CASE("noise-free linear tasks are separable by a convex reference solver") {
  TaskPrior prior;
  prior.teacher = Teacher::kLinear;
  prior.noise_std = 0.0;
  prior.feature_count = {4, 4};
  prior.sample_count = {60, 60};
  prior.seed = 5;
  for (uint64_t stream = 0; stream < 3; ++stream) {
    Table t = sample_task(prior, stream);
    std::vector<double> w;
    double b;
    oracles::irls_logreg(t.x, t.y, 1e-6, w, b, 400);
    std::vector<double> scores(static_cast<size_t>(t.rows()));
    for (int64_t i = 0; i < t.rows(); ++i) {
      double z = b;
      for (int64_t j = 0; j < t.features(); ++j) z += w[static_cast<size_t>(j)] * t.x.at(i, j);
      scores[static_cast<size_t>(i)] = z;
    }
    CHECK(roc_auc(scores, t.y) == 1.0);
  }
}

TEST_CASE("every task in a 1000-task sweep contains both classes") {
  TaskPrior prior;
  prior.teacher = Teacher::kRandomMlp;
  prior.noise_std = 0.3;
  prior.feature_count = {2, 6};
  prior.sample_count = {2, 40};
  prior.seed = 123;
  for (uint64_t stream = 0; stream < 1000; ++stream) {
    Table t = sample_task(prior, stream);
    const int64_t pos = std::count(t.y.begin(), t.y.end(), 1);
    CHECK(pos > 0);
    CHECK(pos < t.rows());
  }
}

TEST_CASE("degenerate priors are rejected") {
  TaskPrior prior;
  prior.feature_count = {5, 4};
  CHECK_THROWS_AS(sample_task(prior, 0), ConfigError);
  prior.feature_count = {4, 5};
  prior.noise_std = -0.1;
  CHECK_THROWS_AS(sample_task(prior, 0), ConfigError);
  prior.noise_std = 0.0;
  prior.sample_count = {0, 4};
  CHECK_THROWS_AS(sample_task(prior, 0), ConfigError);
}

namespace {

std::shared_ptr<Table> balanced_table(int64_t n, uint64_t seed) {
  Rng rng(seed);
  auto t = std::make_shared<Table>();
  t->id = "t";
  t->x = Matrix(n, 3);
  for (double& v : t->x.v) v = rng.gaussian();
  t->y.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) t->y[static_cast<size_t>(i)] = i % 2;
  return t;
}

}  // namespace

TEST_CASE("split sizes follow the fractions exactly on the 100-row example") {
  auto t = balanced_table(100, 1);
  Episode ep = split_episode(t, 0.4, 0.2, 17);
  CHECK(ep.support.size() == 40);
  CHECK(ep.probe_train.size() == 20);
  CHECK(ep.query.size() == 40);

  std::set<int64_t> all;
  for (const auto* part : {&ep.support, &ep.probe_train, &ep.query})
    for (int64_t i : *part) all.insert(i);
  CHECK(all.size() == 100);  // disjoint and covering
}

TEST_CASE("default fractions give a probe-train partition equal to the support size") {
  auto t = balanced_table(96, 2);
  Episode ep = split_episode(t, kDefaultSupportFraction, kDefaultProbeFraction, 3);
  CHECK(ep.probe_train.size() == ep.support.size());
  // nominal train = support + probe-train = half the table
  CHECK(ep.support.size() + ep.probe_train.size() == 48);
}

TEST_CASE("splits are stratified within one row of the table class ratio") {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const int64_t n = rng.uniform_int(40, 160);
    auto t = std::make_shared<Table>();
    t->x = Matrix(n, 2);
    for (double& v : t->x.v) v = rng.gaussian();
    t->y.resize(static_cast<size_t>(n));
    const int64_t pos = rng.uniform_int(n / 3, 2 * n / 3);
    for (int64_t i = 0; i < n; ++i) t->y[static_cast<size_t>(i)] = i < pos ? 1 : 0;
    rng.shuffle(t->y);

    Episode ep;
    try {
      ep = split_episode(t, 0.3, 0.2, rng.next_u64());
    } catch (const SplitError&) {
      continue;  // legitimately too small for a stratified split
    }
    const double ratio = static_cast<double>(pos) / static_cast<double>(n);
    std::set<int64_t> seen;
    for (const auto* part : {&ep.support, &ep.probe_train, &ep.query}) {
      int64_t p = 0;
      for (int64_t i : *part) {
        p += t->y[static_cast<size_t>(i)];
        CHECK(seen.insert(i).second);  // disjoint
      }
      const double expected = ratio * static_cast<double>(part->size());
      CHECK(std::abs(static_cast<double>(p) - expected) <= 1.0 + 1e-9);
    }
    CHECK(seen.size() == static_cast<size_t>(n));  // coverage
  }
}

TEST_CASE("split determinism and error paths") {
  auto t = balanced_table(60, 3);
  Episode a = split_episode(t, 0.3, 0.3, 5);
  Episode b = split_episode(t, 0.3, 0.3, 5);
  CHECK(a.support == b.support);
  CHECK(a.probe_train == b.probe_train);
  CHECK(a.query == b.query);

  CHECK_THROWS_AS(split_episode(t, 0.0, 0.3, 5), ConfigError);
  CHECK_THROWS_AS(split_episode(t, 0.7, 0.3, 5), ConfigError);
  CHECK_THROWS_AS(split_episode(balanced_table(10, 4), 0.34, 0.33, 5), SplitError);
}

TEST_CASE("materialize standardizes features with support statistics only") {
  auto t = balanced_table(80, 9);
  // shift a column so standardization is visible
  for (int64_t i = 0; i < 80; ++i) t->x.at(i, 0) = t->x.at(i, 0) * 3.0 + 10.0;
  Episode ep = split_episode(t, 0.4, 0.2, 1);
  EpisodeView v = materialize(ep);
  double mean = 0.0;
  for (int64_t i = 0; i < v.support_x.rows; ++i) mean += v.support_x.at(i, 0);
  mean /= static_cast<double>(v.support_x.rows);
  CHECK(std::abs(mean) < 1e-12);
  double var = 0.0;
  for (int64_t i = 0; i < v.support_x.rows; ++i)
    var += v.support_x.at(i, 0) * v.support_x.at(i, 0);
  var /= static_cast<double>(v.support_x.rows);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
  // query columns use the same transform, so their mean is near but not exactly zero
  double qmean = 0.0;
  for (int64_t i = 0; i < v.query_x.rows; ++i) qmean += v.query_x.at(i, 0);
  qmean /= static_cast<double>(v.query_x.rows);
  CHECK(std::abs(qmean) < 1.0);
  CHECK(v.query_y.size() == ep.query.size());
}

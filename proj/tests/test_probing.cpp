#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "layerlab/errors.hpp"
#include "layerlab/metrics.hpp"
#include "layerlab/model.hpp"
#include "layerlab/probing.hpp"
#include "layerlab/rng.hpp"
#include "support/oracles.hpp"

using namespace layerlab;

namespace {

ModelConfig tiny_config(Variant v = Variant::kRow) {
  ModelConfig c;
  c.variant = v;
  c.layer_count = 3;
  c.model_dim = 8;
  c.head_count = 2;
  c.ff_dim = 8;
  c.max_features = 6;
  c.seed = 7;
  return c;
}

EpisodeView tiny_view(uint64_t seed, int64_t rows = 40) {
  TaskPrior prior;
  prior.feature_count = {3, 3};
  prior.sample_count = {rows, rows};
  prior.seed = seed;
  Table t = sample_task(prior, 0);
  Episode ep = split_episode(std::make_shared<Table>(std::move(t)), 0.4, 0.3, seed + 1);
  return materialize(ep);
}

}  // namespace

TEST_CASE("embedding stacks have depth plan+1 and carry only query-side rows") {
  Model m = Model::build(tiny_config());
  EpisodeView view = tiny_view(1);
  EmbeddingStack stack = extract_embeddings(m, view, plan_identity(3));
  CHECK(stack.depth() == 4);
  for (const Matrix& layer : stack.layers) {
    CHECK(layer.rows == view.probe_x.rows + view.query_x.rows);
    CHECK(layer.cols == m.config().model_dim);
  }
  CHECK(stack.probe_rows == view.probe_x.rows);
  CHECK(stack.probe_labels == view.probe_y);
  CHECK(stack.query_labels == view.query_y);
}

TEST_CASE("identity stack prefixes equal truncated-forward captures") {
  Model m = Model::build(tiny_config());
  EpisodeView view = tiny_view(2);
  EmbeddingStack full = extract_embeddings(m, view, plan_identity(3));
  for (int64_t k = 1; k <= 3; ++k) {
    std::vector<int64_t> prefix;
    for (int64_t i = 0; i < k; ++i) prefix.push_back(i);
    EmbeddingStack truncated = extract_embeddings(m, view, plan_custom(3, prefix));
    CHECK(truncated.depth() == k + 1);
    const Matrix& a = truncated.layers.back();
    const Matrix& b = full.layers[static_cast<size_t>(k)];
    CHECK(std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("linear probe separates linearly separable toy data") {
  Matrix x(8, 2);
  std::vector<int> y(8);
  for (int64_t i = 0; i < 8; ++i) {
    const double side = i < 4 ? -1.0 : 1.0;
    x.at(i, 0) = side * (1.0 + 0.1 * static_cast<double>(i));
    x.at(i, 1) = 0.3 * static_cast<double>(i % 3);
    y[static_cast<size_t>(i)] = side > 0 ? 1 : 0;
  }
  LinearProbe p = LinearProbe::fit(x, y, 1e-4);
  CHECK(roc_auc(p.score(x), y) == 1.0);
}

TEST_CASE("constant embedding columns get zero weight") {
  Rng rng(3);
  Matrix x(20, 3);
  std::vector<int> y(20);
  for (int64_t i = 0; i < 20; ++i) {
    x.at(i, 0) = rng.gaussian();
    x.at(i, 1) = 7.5;  // constant
    x.at(i, 2) = rng.gaussian();
    y[static_cast<size_t>(i)] = x.at(i, 0) > 0 ? 1 : 0;
  }
  LinearProbe p = LinearProbe::fit(x, y, 1e-3);
  CHECK(std::abs(p.weights()[1]) <= 1e-12);
}

TEST_CASE("linear probe coefficients match the IRLS oracle") {
  Rng rng(17);
  for (int rep = 0; rep < 3; ++rep) {
    const int64_t n = 40, d = 5;
    Matrix x(n, d);
    std::vector<int> y(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        x.at(i, j) = rng.gaussian();
        z += x.at(i, j) * (j % 2 == 0 ? 0.8 : -0.5);
      }
      // noisy labels keep the optimum in a well-conditioned region
      y[static_cast<size_t>(i)] = (z + rng.gaussian() > 0.0) ? 1 : 0;
    }
    if (std::count(y.begin(), y.end(), 1) < 2 || std::count(y.begin(), y.end(), 0) < 2) continue;

    const double reg = 1e-4;
    LinearProbe p = LinearProbe::fit(x, y, reg);

    // the oracle standardizes with its own counting, then runs IRLS
    Matrix z(n, d);
    for (int64_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (int64_t i = 0; i < n; ++i) mean += x.at(i, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t i = 0; i < n; ++i) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
      var /= static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) z.at(i, j) = (x.at(i, j) - mean) / std::sqrt(var);
    }
    std::vector<double> w_oracle;
    double b_oracle;
    oracles::irls_logreg(z, y, reg, w_oracle, b_oracle);
    for (int64_t j = 0; j < d; ++j)
      CHECK(std::abs(p.weights()[static_cast<size_t>(j)] - w_oracle[static_cast<size_t>(j)]) < 1e-4);
    CHECK(std::abs(p.bias() - b_oracle) < 1e-4);
  }
}

TEST_CASE("single-class labels are a fit error") {
  Matrix x(4, 2);
  std::vector<int> y = {1, 1, 1, 1};
  CHECK_THROWS_AS(LinearProbe::fit(x, y, 1e-4), FitError);
}

TEST_CASE("knn probe with k=1 reproduces its own training labels") {
  Rng rng(5);
  Matrix x(12, 3);
  for (double& v : x.v) v = rng.gaussian();
  std::vector<int> y(12);
  for (size_t i = 0; i < 12; ++i) y[i] = static_cast<int>(i % 2);
  KnnProbe p = KnnProbe::fit(x, y, 1);
  std::vector<double> s = p.score(x);
  for (size_t i = 0; i < 12; ++i) CHECK(s[i] == static_cast<double>(y[i]));
}

TEST_CASE("knn distance ties break toward the lower training-row index") {
  Matrix x(2, 1);
  x.at(0, 0) = 1.0;
  x.at(1, 0) = -1.0;  // standardization keeps them symmetric around 0
  std::vector<int> y = {1, 0};
  KnnProbe p = KnnProbe::fit(x, y, 1);
  Matrix q(1, 1);
  q.at(0, 0) = 0.0;  // equidistant
  CHECK(p.score(q)[0] == 1.0);  // row 0 wins the tie
}

TEST_CASE("knn with k equal to the row count yields constant scores and AUC one half") {
  Rng rng(9);
  Matrix x(14, 2);
  for (double& v : x.v) v = rng.gaussian();
  std::vector<int> y(14);
  for (size_t i = 0; i < 14; ++i) y[i] = static_cast<int>(i < 5);
  KnnProbe p = KnnProbe::fit(x, y, 14);
  std::vector<double> s = p.score(x);
  for (double v : s) CHECK(v == s[0]);
  CHECK(roc_auc(s, y) == 0.5);
  CHECK_THROWS_AS(KnnProbe::fit(x, y, 15), ConfigError);
  CHECK_THROWS_AS(KnnProbe::fit(x, y, 0), ConfigError);
}

TEST_CASE("knn scores equal the brute-force scan oracle on 100 random rows") {
  Rng rng(21);
  const int64_t n = 100, d = 4, k = 5;
  Matrix train(n, d);
  for (double& v : train.v) v = rng.gaussian();
  std::vector<int> y(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) y[static_cast<size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
  KnnProbe p = KnnProbe::fit(train, y, k);

  Matrix queries(40, d);
  for (double& v : queries.v) v = rng.gaussian();
  std::vector<double> got = p.score(queries);

  // oracle works in the same standardized space, selected by repeated scan
  Standardizer st = Standardizer::fit(train);
  Matrix ztrain = st.apply(train);
  Matrix zq = st.apply(queries);
  for (int64_t i = 0; i < 40; ++i) {
    std::vector<double> qrow(zq.row(i).begin(), zq.row(i).end());
    auto idx = oracles::knn_scan(ztrain, qrow, k);
    double votes = 0.0;
    for (int64_t t : idx) votes += static_cast<double>(y[static_cast<size_t>(t)]);
    CHECK(got[static_cast<size_t>(i)] == votes / static_cast<double>(k));
  }
}

TEST_CASE("decoder probe with zero steps reproduces the frozen early-exit readout bit-exactly") {
  Model m = Model::build(tiny_config());
  EpisodeView view = tiny_view(11);
  EmbeddingStack stack = extract_embeddings(m, view, plan_identity(3));
  DecoderProbe p = DecoderProbe::fit(m, Matrix(stack.probe_rows, m.config().model_dim),
                                     std::vector<int>(static_cast<size_t>(stack.probe_rows), 0),
                                     0, 1e-2);
  for (int64_t k = 0; k < 3; ++k) {
    const Matrix& layer = stack.layers[static_cast<size_t>(k + 1)];
    std::vector<double> probe_scores = p.score(layer);
    ForwardResult exit = m.forward_early_exit(view, k);
    const int64_t np = stack.probe_rows;
    for (int64_t i = 0; i < layer.rows; ++i) {
      const Matrix& src = i < np ? exit.probe_logits : exit.query_logits;
      const int64_t row = i < np ? i : i - np;
      CHECK(probe_scores[static_cast<size_t>(i)] == src.at(row, 1) - src.at(row, 0));
    }
  }
}

TEST_CASE("decoder probe fine-tuning lowers the probe-train loss and leaves the model intact") {
  Model m = Model::build(tiny_config());
  const uint64_t checksum_before = m.parameter_checksum();
  EpisodeView view = tiny_view(13);
  EmbeddingStack stack = extract_embeddings(m, view, plan_identity(3));
  Matrix train(stack.probe_rows, m.config().model_dim);
  std::copy(stack.layers[2].v.begin(), stack.layers[2].v.begin() + train.v.size(),
            train.v.begin());

  DecoderProbe p = DecoderProbe::fit(m, train, stack.probe_labels, 200, 1e-2);
  const auto& curve = p.loss_curve();
  REQUIRE(curve.size() == 200);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) head += curve[static_cast<size_t>(i)] / 50.0;
  for (int i = 0; i < 50; ++i) tail += curve[curve.size() - 1 - static_cast<size_t>(i)] / 50.0;
  CHECK(tail < head);
  CHECK(m.parameter_checksum() == checksum_before);
}

TEST_CASE("transfer matrices have the right shape and a self-consistent diagonal") {
  Model m = Model::build(tiny_config());
  EpisodeView view = tiny_view(15, 60);
  EmbeddingStack stack = extract_embeddings(m, view, plan_identity(3));
  ProbeOptions opt;
  TransferMatrix tm = build_transfer_matrix(stack, ProbeKind::kLinear, &m, opt);
  CHECK(tm.depth == 4);
  CHECK(static_cast<int64_t>(tm.cells.size()) == 16);
  CHECK(tm.missing_count() == 0);
  for (int64_t i = 0; i < 4; ++i) {
    // diagonal equals an independently fitted self-probe
    Matrix train(stack.probe_rows, m.config().model_dim);
    std::copy(stack.layers[static_cast<size_t>(i)].v.begin(),
              stack.layers[static_cast<size_t>(i)].v.begin() + train.v.size(), train.v.begin());
    LinearProbe p = LinearProbe::fit(train, stack.probe_labels, opt.linear_reg);
    Matrix eval(stack.layers[static_cast<size_t>(i)].rows - stack.probe_rows,
                m.config().model_dim);
    std::copy(stack.layers[static_cast<size_t>(i)].v.begin() + train.v.size(),
              stack.layers[static_cast<size_t>(i)].v.end(), eval.v.begin());
    CHECK(*tm.at(i, i) == roc_auc(p.score(eval), stack.query_labels));
    for (int64_t j = 0; j < 4; ++j) {
      CHECK(*tm.at(i, j) >= 0.0);
      CHECK(*tm.at(i, j) <= 1.0);
    }
  }
}

TEST_CASE("failed probe fits leave cells missing rather than zero") {
  Model m = Model::build(tiny_config());
  EpisodeView view = tiny_view(17);
  EmbeddingStack stack = extract_embeddings(m, view, plan_identity(3));
  for (int& y : stack.probe_labels) y = 1;  // degenerate: single class
  TransferMatrix tm = build_transfer_matrix(stack, ProbeKind::kLinear, &m, ProbeOptions{});
  CHECK(tm.missing_count() == 16);
  for (const auto& c : tm.cells) CHECK(!c.has_value());
}

TEST_CASE("decoder transfer matrices work and need the model") {
  Model m = Model::build(tiny_config());
  EpisodeView view = tiny_view(19, 60);
  EmbeddingStack stack = extract_embeddings(m, view, plan_identity(3));
  ProbeOptions opt;
  opt.decoder_steps = 40;
  CHECK_THROWS_AS(build_transfer_matrix(stack, ProbeKind::kDecoder, nullptr, opt), ConfigError);
  TransferMatrix tm = build_transfer_matrix(stack, ProbeKind::kDecoder, &m, opt);
  CHECK(tm.depth == 4);
  CHECK(tm.missing_count() == 0);
}

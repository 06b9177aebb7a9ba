#include "layerlab/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "layerlab/errors.hpp"
#include "layerlab/rng.hpp"

namespace layerlab {

namespace {

constexpr int64_t kMlpHidden = 16;

void check_prior(const TaskPrior& prior) {
  if (!prior.feature_count.valid())
    throw ConfigError("task prior: empty feature count range [" +
                      std::to_string(prior.feature_count.lo) + ", " +
                      std::to_string(prior.feature_count.hi) + "]");
  if (!prior.sample_count.valid())
    throw ConfigError("task prior: empty sample count range [" +
                      std::to_string(prior.sample_count.lo) + ", " +
                      std::to_string(prior.sample_count.hi) + "]");
  if (prior.sample_count.lo < 2)
    throw ConfigError("task prior: sample count must be >= 2");
  if (prior.noise_std < 0.0)
    throw ConfigError("task prior: noise_std must be >= 0, got " +
                      std::to_string(prior.noise_std));
}

}  // namespace

Table sample_task(const TaskPrior& prior, uint64_t stream) {
  check_prior(prior);
  Rng rng(split_seed(prior.seed, stream));

  const int64_t n = rng.uniform_int(prior.sample_count.lo, prior.sample_count.hi);
  const int64_t d = rng.uniform_int(prior.feature_count.lo, prior.feature_count.hi);

  Table t;
  t.id = "task-" + std::to_string(stream);
  t.x = Matrix(n, d);
  for (double& v : t.x.v) v = rng.gaussian();

  std::vector<double> score(static_cast<size_t>(n), 0.0);
  if (prior.teacher == Teacher::kLinear) {
    std::vector<double> w(static_cast<size_t>(d));
    for (double& v : w) v = rng.gaussian();
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j) s += t.x.at(i, j) * w[static_cast<size_t>(j)];
      score[static_cast<size_t>(i)] = s;
    }
  } else {
    // Two-layer tanh network, weights ~ N(0, 1/fan_in).
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(kMlpHidden));
    std::vector<double> w1(static_cast<size_t>(d * kMlpHidden));
    std::vector<double> w2(static_cast<size_t>(kMlpHidden));
    for (double& v : w1) v = rng.gaussian(0.0, s1);
    for (double& v : w2) v = rng.gaussian(0.0, s2);
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t h = 0; h < kMlpHidden; ++h) {
        double z = 0.0;
        for (int64_t j = 0; j < d; ++j)
          z += t.x.at(i, j) * w1[static_cast<size_t>(j * kMlpHidden + h)];
        s += std::tanh(z) * w2[static_cast<size_t>(h)];
      }
      score[static_cast<size_t>(i)] = s;
    }
  }

  if (prior.noise_std > 0.0)
    for (double& s : score) s += rng.gaussian(0.0, prior.noise_std);

  // Median thresholding realized as a rank split: the top floor(n/2) rows by
  // noisy teacher score are positive, ties broken by lower row index. This is
  // strictly-above-median labeling for distinct scores and keeps both classes
  // present for every n >= 2.
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (score[static_cast<size_t>(a)] != score[static_cast<size_t>(b)])
      return score[static_cast<size_t>(a)] > score[static_cast<size_t>(b)];
    return a < b;
  });
  t.y.assign(static_cast<size_t>(n), 0);
  for (int64_t r = 0; r < n / 2; ++r) t.y[static_cast<size_t>(order[static_cast<size_t>(r)])] = 1;
  return t;
}

Episode split_episode(std::shared_ptr<const Table> table, double support_fraction,
                      double probe_fraction, uint64_t seed) {
  if (!table) throw ConfigError("split_episode: null table");
  if (!(support_fraction > 0.0 && support_fraction < 1.0) ||
      !(probe_fraction > 0.0 && probe_fraction < 1.0) ||
      support_fraction + probe_fraction >= 1.0)
    throw ConfigError("split_episode: fractions must lie in (0,1) with support + probe < 1");

  const int64_t n = table->rows();
  const int64_t n_support = std::llround(support_fraction * static_cast<double>(n));
  const int64_t n_probe = std::llround(probe_fraction * static_cast<double>(n));
  const int64_t n_query = n - n_support - n_probe;
  const int64_t sizes[3] = {n_support, n_probe, n_query};

  // Per-class row pools, shuffled once.
  std::vector<int64_t> pool[2];
  for (int64_t i = 0; i < n; ++i) pool[table->y[static_cast<size_t>(i)] == 1].push_back(i);
  Rng rng(seed);
  rng.shuffle(pool[0]);
  rng.shuffle(pool[1]);

  // Sequential stratified apportionment: each split takes its proportional
  // share of what remains per class, leftovers go to the larger remainder
  // (remainder ties resolved toward the class whose next row has the lower
  // original index). The last split absorbs the remainder, so totals are
  // exact and every split stays within one row of the table's class ratio.
  int64_t cursor[2] = {0, 0};
  Episode ep;
  ep.table = table;
  std::vector<int64_t>* out[3] = {&ep.support, &ep.probe_train, &ep.query};
  for (int s = 0; s < 3; ++s) {
    const int64_t rem0 = static_cast<int64_t>(pool[0].size()) - cursor[0];
    const int64_t rem1 = static_cast<int64_t>(pool[1].size()) - cursor[1];
    const int64_t rem_total = rem0 + rem1;
    int64_t take[2];
    if (s == 2) {
      take[0] = rem0;
      take[1] = rem1;
    } else {
      const double q0 = static_cast<double>(sizes[s]) * static_cast<double>(rem0) /
                        static_cast<double>(rem_total);
      take[0] = static_cast<int64_t>(std::floor(q0));
      take[1] = static_cast<int64_t>(std::floor(static_cast<double>(sizes[s]) - q0));
      int64_t leftover = sizes[s] - take[0] - take[1];
      while (leftover-- > 0) {
        const double r0 = q0 - std::floor(q0);
        const double r1 = (static_cast<double>(sizes[s]) - q0) -
                          std::floor(static_cast<double>(sizes[s]) - q0);
        int c;
        if (take[0] >= rem0)
          c = 1;
        else if (take[1] >= rem1)
          c = 0;
        else if (r0 != r1)
          c = r0 > r1 ? 0 : 1;
        else
          c = pool[0][static_cast<size_t>(cursor[0] + take[0])] <
                      pool[1][static_cast<size_t>(cursor[1] + take[1])]
                  ? 0
                  : 1;
        ++take[c];
      }
    }
    for (int c = 0; c < 2; ++c) {
      if (take[c] < 2)
        throw SplitError("split_episode: table too small, split " + std::to_string(s) +
                         " would get " + std::to_string(take[c]) + " rows of class " +
                         std::to_string(c) + " (need >= 2)");
      for (int64_t i = 0; i < take[c]; ++i)
        out[s]->push_back(pool[c][static_cast<size_t>(cursor[c] + i)]);
      cursor[c] += take[c];
    }
    std::sort(out[s]->begin(), out[s]->end());
  }
  return ep;
}

EpisodeView materialize(const Episode& episode, bool standardize) {
  const Table& t = *episode.table;
  const int64_t d = t.features();

  auto fill = [&](const std::vector<int64_t>& idx, Matrix& x, std::vector<int>& y) {
    x = Matrix(static_cast<int64_t>(idx.size()), d);
    y.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy(t.x.row(idx[i]).begin(), t.x.row(idx[i]).end(), x.row(static_cast<int64_t>(i)).begin());
      y[i] = t.y[static_cast<size_t>(idx[i])];
    }
  };

  EpisodeView v;
  fill(episode.support, v.support_x, v.support_y);
  fill(episode.probe_train, v.probe_x, v.probe_y);
  fill(episode.query, v.query_x, v.query_y);

  if (standardize && v.support_x.rows > 0) {
    const int64_t ns = v.support_x.rows;
    for (int64_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (int64_t i = 0; i < ns; ++i) mean += v.support_x.at(i, j);
      mean /= static_cast<double>(ns);
      double var = 0.0;
      for (int64_t i = 0; i < ns; ++i) {
        const double dv = v.support_x.at(i, j) - mean;
        var += dv * dv;
      }
      var /= static_cast<double>(ns);
      const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
      for (Matrix* m : {&v.support_x, &v.probe_x, &v.query_x})
        for (int64_t i = 0; i < m->rows; ++i)
          m->at(i, j) = (m->at(i, j) - mean) * inv;
    }
  }
  return v;
}

}  // namespace layerlab

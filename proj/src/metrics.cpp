#include "layerlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "layerlab/errors.hpp"

namespace layerlab {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const size_t n = scores.size();
  if (n != labels.size())
    throw MetricError("roc_auc: scores length " + std::to_string(n) +
                      " != labels length " + std::to_string(labels.size()));
  if (n == 0) throw MetricError("roc_auc: empty input");
  int64_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw MetricError("roc_auc: labels must be 0/1");
    pos += y;
  }
  const int64_t neg = static_cast<int64_t>(n) - pos;
  if (pos == 0 || neg == 0)
    throw MetricError("roc_auc: both classes required (got " + std::to_string(pos) +
                      " positives, " + std::to_string(neg) + " negatives)");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average 1-based ranks within tie groups, accumulated over positives.
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double u = pos_rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_auc(std::span<const double> per_dataset_auc) {
  if (per_dataset_auc.empty()) throw MetricError("average_auc: no datasets");
  double sum = 0.0;
  for (double a : per_dataset_auc) sum += a;
  return sum / static_cast<double>(per_dataset_auc.size());
}

WtlSummary win_tie_lose(std::span<const MetricRecord> records, double tie_threshold) {
  if (tie_threshold < 0.0)
    throw MetricError("win_tie_lose: tie threshold must be >= 0, got " +
                      std::to_string(tie_threshold));
  WtlSummary s;
  s.tie_threshold = tie_threshold;
  for (const auto& r : records) {
    if (std::abs(r.delta) <= tie_threshold)
      ++s.ties;
    else if (r.delta > tie_threshold)
      ++s.wins;
    else
      ++s.losses;
  }
  return s;
}

CosineResult cosine_similarity_matrix(const std::vector<Matrix>& stack) {
  if (stack.empty()) throw MetricError("cosine_similarity_matrix: empty stack");
  const int64_t depth = static_cast<int64_t>(stack.size());
  const int64_t rows = stack[0].rows;
  for (const auto& m : stack)
    if (m.rows != rows || m.cols != stack[0].cols)
      throw MetricError("cosine_similarity_matrix: layer shapes differ");

  std::vector<std::vector<double>> norms(static_cast<size_t>(depth),
                                         std::vector<double>(static_cast<size_t>(rows)));
  std::vector<bool> row_zero(static_cast<size_t>(rows), false);
  for (int64_t l = 0; l < depth; ++l) {
    for (int64_t r = 0; r < rows; ++r) {
      auto row = stack[static_cast<size_t>(l)].row(r);
      double s = 0.0;
      for (double x : row) s += x * x;
      const double nrm = std::sqrt(s);
      norms[static_cast<size_t>(l)][static_cast<size_t>(r)] = nrm;
      if (nrm == 0.0) row_zero[static_cast<size_t>(r)] = true;
    }
  }

  CosineResult out;
  out.matrix = Matrix(depth, depth);
  out.excluded_rows = std::count(row_zero.begin(), row_zero.end(), true);
  for (int64_t i = 0; i < depth; ++i) {
    out.matrix.at(i, i) = 1.0;  // cos(v, v) = 1 for every included row
    for (int64_t j = i + 1; j < depth; ++j) {
      const Matrix& a = stack[static_cast<size_t>(i)];
      const Matrix& b = stack[static_cast<size_t>(j)];
      double sum = 0.0;
      int64_t used = 0;
      for (int64_t r = 0; r < rows; ++r) {
        const double na = norms[static_cast<size_t>(i)][static_cast<size_t>(r)];
        const double nb = norms[static_cast<size_t>(j)][static_cast<size_t>(r)];
        if (na == 0.0 || nb == 0.0) continue;
        double dot = 0.0;
        auto ra = a.row(r);
        auto rb = b.row(r);
        for (int64_t c = 0; c < a.cols; ++c) dot += ra[static_cast<size_t>(c)] * rb[static_cast<size_t>(c)];
        double cosv = dot / (na * nb);
        cosv = std::clamp(cosv, -1.0, 1.0);  // guard rounding past the unit bound
        sum += cosv;
        ++used;
      }
      const double value = used > 0 ? sum / static_cast<double>(used)
                                    : std::numeric_limits<double>::quiet_NaN();
      out.matrix.at(i, j) = value;
      out.matrix.at(j, i) = value;
    }
  }
  return out;
}

}  // namespace layerlab

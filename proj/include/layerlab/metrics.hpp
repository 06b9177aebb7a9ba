#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "layerlab/matrix.hpp"

namespace layerlab {

// One evaluated grid cell: a surgered (or identity) run on one dataset.
struct MetricRecord {
  std::string dataset;
  std::string plan;
  double auc = 0.0;
  double baseline_auc = 0.0;
  double delta = 0.0;  // auc - baseline_auc
};

struct WtlSummary {
  int64_t wins = 0;
  int64_t ties = 0;
  int64_t losses = 0;
  double tie_threshold = 2e-4;
};

// Exact ROC-AUC via the Mann-Whitney U statistic with average-rank tie
// handling: (wins + 0.5 * ties) / (positives * negatives) over all
// positive-negative score pairs. Throws MetricError on single-class labels.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Unweighted (macro) mean over per-dataset AUCs.
double average_auc(std::span<const double> per_dataset_auc);

// Classifies each record against its baseline. |delta| <= threshold counts as
// a tie; the boundary itself is a tie.
WtlSummary win_tie_lose(std::span<const MetricRecord> records, double tie_threshold);

struct CosineResult {
  Matrix matrix;           // (layers x layers), symmetric, unit diagonal
  int64_t excluded_rows;   // rows with a zero-norm embedding in some layer
};

// Mean over rows of cos(row at layer i, same row at layer j). Zero-norm rows
// are excluded from the mean rather than scored as zero.
CosineResult cosine_similarity_matrix(const std::vector<Matrix>& stack);

}  // namespace layerlab

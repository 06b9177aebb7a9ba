#pragma once

#include <memory>
#include <string>
#include <vector>

#include "layerlab/matrix.hpp"

namespace layerlab {

// A preprocessed tabular dataset: numeric features plus a binary target.
struct Table {
  std::string id;
  Matrix x;            // rows x features
  std::vector<int> y;  // 0/1 per row

  int64_t rows() const { return x.rows; }
  int64_t features() const { return x.cols; }
};

// One ICL instance over a Table: three disjoint row-index sets covering all
// rows. Query labels stay accessible but are treated as held-out; probe-train
// rows ride along with the queries and exist only to fit probing classifiers.
struct Episode {
  std::shared_ptr<const Table> table;
  std::vector<int64_t> support;
  std::vector<int64_t> probe_train;
  std::vector<int64_t> query;
};

// Model-ready view of an episode: feature blocks per partition, standardized
// with support-row statistics so query rows never leak into the scaling.
struct EpisodeView {
  Matrix support_x;
  std::vector<int> support_y;
  Matrix probe_x;
  std::vector<int> probe_y;
  Matrix query_x;
  std::vector<int> query_y;  // held-out; used only for metrics

  int64_t features() const { return support_x.cols; }
};

}  // namespace layerlab

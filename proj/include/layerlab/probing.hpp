#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layerlab/model.hpp"

namespace layerlab {

enum class ProbeKind { kLinear, kKnn, kDecoder };

std::string probe_kind_name(ProbeKind k);
ProbeKind probe_kind_from_name(const std::string& name);

// Per-column standardization fitted on training rows; zero-variance columns
// map to zero.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> inv_std;

  static Standardizer fit(const Matrix& rows);
  Matrix apply(const Matrix& rows) const;
};

struct ProbeOptions {
  double linear_reg = 1e-4;     // L2 strength on weights (bias unregularized)
  int64_t knn_k = 5;
  int64_t decoder_steps = 200;
  double decoder_lr = 1e-2;
};

// L2-regularized logistic regression on standardized embeddings, fitted to
// convergence (gradient norm < 1e-8 or iteration cap) with L-BFGS from a zero
// start; a deterministic function of its inputs. Objective:
//   (1/m) sum_i [log(1 + exp(z_i)) - y_i z_i] + (reg/2)||w||^2, z = w.x + b.
class LinearProbe {
 public:
  static LinearProbe fit(const Matrix& embeddings, std::span<const int> labels, double reg);

  // Decision margin w.x + b per row (monotone in the class-1 probability).
  std::vector<double> score(const Matrix& embeddings) const;

  std::span<const double> weights() const { return w_; }
  double bias() const { return b_; }

  int64_t trained_on_layer = -1;

 private:
  Standardizer std_;
  std::vector<double> w_;
  double b_ = 0.0;
};

// Stores standardized training rows; scores a row by the positive fraction of
// its k nearest neighbours (Euclidean), distance ties broken by the lower
// training-row index.
class KnnProbe {
 public:
  static KnnProbe fit(const Matrix& embeddings, std::span<const int> labels, int64_t k);

  std::vector<double> score(const Matrix& embeddings) const;

  int64_t trained_on_layer = -1;

 private:
  Standardizer std_;
  Matrix train_;
  std::vector<int> labels_;
  int64_t k_ = 1;
};

// A copy of the model decoder fine-tuned on probe-train embeddings by Adam on
// cross-entropy. With steps = 0 it is exactly the frozen decoder, so scoring
// reproduces the early-exit readout bit for bit. The model's own decoder is
// never touched. No standardization: the decoder operates on raw embeddings.
class DecoderProbe {
 public:
  static DecoderProbe fit(const Model& model, const Matrix& embeddings,
                          std::span<const int> labels, int64_t steps, double learning_rate);

  std::vector<double> score(const Matrix& embeddings) const;
  const std::vector<double>& loss_curve() const { return curve_; }

  int64_t trained_on_layer = -1;

 private:
  DecoderParams dec_;
  std::vector<double> curve_;
};

// AUC grid: entry (i, j) is the probe fitted on layer-i probe-train
// embeddings, evaluated on layer-j query embeddings. Cells whose fit or
// evaluation fails are missing, never zero.
struct TransferMatrix {
  int64_t depth = 0;
  std::vector<std::optional<double>> cells;  // row-major

  std::optional<double>& at(int64_t i, int64_t j) {
    return cells[static_cast<size_t>(i * depth + j)];
  }
  const std::optional<double>& at(int64_t i, int64_t j) const {
    return cells[static_cast<size_t>(i * depth + j)];
  }

  int64_t missing_count() const;
  // Means over the strictly-upper and strictly-lower triangles (present cells).
  double upper_triangle_mean() const;
  double lower_triangle_mean() const;
};

// Capture-enabled forward: stack of (plan length + 1) embedding matrices over
// probe-train and query rows only (index 0 is the encoder output).
EmbeddingStack extract_embeddings(const Model& model, const EpisodeView& view,
                                  const LayerPlan& plan);

TransferMatrix build_transfer_matrix(const EmbeddingStack& stack, ProbeKind kind,
                                     const Model* model, const ProbeOptions& opt);

}  // namespace layerlab

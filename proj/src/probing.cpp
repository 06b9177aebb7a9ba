#include "layerlab/probing.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "layerlab/errors.hpp"
#include "layerlab/metrics.hpp"

namespace layerlab {

namespace {

Matrix take_rows(const Matrix& m, int64_t start, int64_t count) {
  Matrix out(count, m.cols);
  std::copy(m.v.begin() + start * m.cols, m.v.begin() + (start + count) * m.cols, out.v.begin());
  return out;
}

void check_two_classes(std::span<const int> labels) {
  int64_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw FitError("probe labels must be 0/1");
    pos += y;
  }
  if (pos < 2 || static_cast<int64_t>(labels.size()) - pos < 2)
    throw FitError("probe fit requires at least 2 rows per class (got " + std::to_string(pos) +
                   " positives of " + std::to_string(labels.size()) + ")");
}

// Objective and gradient of L2-regularized logistic NLL over theta = [w; b].
double logreg_value_grad(const Matrix& x, std::span<const int> y, double reg,
                         const std::vector<double>& theta, std::vector<double>& grad) {
  const int64_t m = x.rows, d = x.cols;
  grad.assign(static_cast<size_t>(d + 1), 0.0);
  double f = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    double z = theta[static_cast<size_t>(d)];
    for (int64_t j = 0; j < d; ++j) z += theta[static_cast<size_t>(j)] * x.at(i, j);
    const double yi = static_cast<double>(y[static_cast<size_t>(i)]);
    f += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - yi * z;
    const double p = 1.0 / (1.0 + std::exp(-z));
    const double r = (p - yi) / static_cast<double>(m);
    for (int64_t j = 0; j < d; ++j) grad[static_cast<size_t>(j)] += r * x.at(i, j);
    grad[static_cast<size_t>(d)] += r;
  }
  f /= static_cast<double>(m);
  for (int64_t j = 0; j < d; ++j) {
    f += 0.5 * reg * theta[static_cast<size_t>(j)] * theta[static_cast<size_t>(j)];
    grad[static_cast<size_t>(j)] += reg * theta[static_cast<size_t>(j)];
  }
  return f;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// L-BFGS with two-loop recursion and Armijo backtracking, zero start.
std::vector<double> lbfgs_logreg(const Matrix& x, std::span<const int> y, double reg,
                                 double tol = 1e-8, int max_iter = 500) {
  const size_t dim = static_cast<size_t>(x.cols + 1);
  std::vector<double> theta(dim, 0.0), grad;
  double f = logreg_value_grad(x, y, reg, theta, grad);

  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  const size_t hist_max = 10;

  for (int iter = 0; iter < max_iter; ++iter) {
    if (std::sqrt(dot(grad, grad)) < tol) break;

    std::vector<double> q = grad;
    std::vector<double> alpha(s_hist.size());
    for (size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * dot(s_hist[i], q);
      for (size_t j = 0; j < dim; ++j) q[j] -= alpha[i] * y_hist[i][j];
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& v : q) v *= gamma;
    }
    for (size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * dot(y_hist[i], q);
      for (size_t j = 0; j < dim; ++j) q[j] += (alpha[i] - beta) * s_hist[i][j];
    }
    std::vector<double> dir(dim);
    for (size_t j = 0; j < dim; ++j) dir[j] = -q[j];
    double slope = dot(dir, grad);
    if (slope >= 0.0) {  // fall back to steepest descent
      for (size_t j = 0; j < dim; ++j) dir[j] = -grad[j];
      slope = -dot(grad, grad);
    }

    double t = 1.0;
    std::vector<double> cand(dim), cand_grad;
    double cand_f = f;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      for (size_t j = 0; j < dim; ++j) cand[j] = theta[j] + t * dir[j];
      cand_f = logreg_value_grad(x, y, reg, cand, cand_grad);
      if (cand_f <= f + 1e-4 * t * slope) break;
    }

    std::vector<double> s(dim), yv(dim);
    for (size_t j = 0; j < dim; ++j) {
      s[j] = cand[j] - theta[j];
      yv[j] = cand_grad[j] - grad[j];
    }
    const double sy = dot(s, yv);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > hist_max) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    theta = std::move(cand);
    grad = std::move(cand_grad);
    f = cand_f;
  }
  return theta;
}

}  // namespace

std::string probe_kind_name(ProbeKind k) {
  switch (k) {
    case ProbeKind::kLinear:
      return "linear";
    case ProbeKind::kKnn:
      return "knn";
    case ProbeKind::kDecoder:
      return "decoder";
  }
  return "?";
}

ProbeKind probe_kind_from_name(const std::string& name) {
  if (name == "linear") return ProbeKind::kLinear;
  if (name == "knn") return ProbeKind::kKnn;
  if (name == "decoder") return ProbeKind::kDecoder;
  throw ConfigError("unknown probe kind '" + name + "' (expected linear, knn, decoder)");
}

Standardizer Standardizer::fit(const Matrix& rows) {
  Standardizer s;
  s.mean.assign(static_cast<size_t>(rows.cols), 0.0);
  s.inv_std.assign(static_cast<size_t>(rows.cols), 0.0);
  if (rows.rows == 0) return s;
  for (int64_t j = 0; j < rows.cols; ++j) {
    double mean = 0.0;
    for (int64_t i = 0; i < rows.rows; ++i) mean += rows.at(i, j);
    mean /= static_cast<double>(rows.rows);
    double var = 0.0;
    for (int64_t i = 0; i < rows.rows; ++i) {
      const double d = rows.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(rows.rows);
    s.mean[static_cast<size_t>(j)] = mean;
    s.inv_std[static_cast<size_t>(j)] = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& rows) const {
  Matrix out(rows.rows, rows.cols);
  for (int64_t i = 0; i < rows.rows; ++i)
    for (int64_t j = 0; j < rows.cols; ++j)
      out.at(i, j) = (rows.at(i, j) - mean[static_cast<size_t>(j)]) * inv_std[static_cast<size_t>(j)];
  return out;
}

LinearProbe LinearProbe::fit(const Matrix& embeddings, std::span<const int> labels, double reg) {
  if (embeddings.rows != static_cast<int64_t>(labels.size()))
    throw FitError("linear probe: embeddings/labels length mismatch");
  check_two_classes(labels);
  LinearProbe p;
  p.std_ = Standardizer::fit(embeddings);
  const Matrix z = p.std_.apply(embeddings);
  std::vector<double> theta = lbfgs_logreg(z, labels, reg);
  p.w_.assign(theta.begin(), theta.end() - 1);
  p.b_ = theta.back();
  return p;
}

std::vector<double> LinearProbe::score(const Matrix& embeddings) const {
  if (embeddings.cols != static_cast<int64_t>(w_.size()))
    throw FitError("linear probe: embedding width " + std::to_string(embeddings.cols) +
                   " does not match fitted width " + std::to_string(w_.size()));
  const Matrix z = std_.apply(embeddings);
  std::vector<double> out(static_cast<size_t>(z.rows));
  for (int64_t i = 0; i < z.rows; ++i) {
    double s = b_;
    for (int64_t j = 0; j < z.cols; ++j) s += w_[static_cast<size_t>(j)] * z.at(i, j);
    out[static_cast<size_t>(i)] = s;
  }
  return out;
}

KnnProbe KnnProbe::fit(const Matrix& embeddings, std::span<const int> labels, int64_t k) {
  if (embeddings.rows != static_cast<int64_t>(labels.size()))
    throw FitError("knn probe: embeddings/labels length mismatch");
  if (k < 1 || k > embeddings.rows)
    throw ConfigError("knn probe: k = " + std::to_string(k) + " must lie in [1, " +
                      std::to_string(embeddings.rows) + "]");
  KnnProbe p;
  p.std_ = Standardizer::fit(embeddings);
  p.train_ = p.std_.apply(embeddings);
  p.labels_.assign(labels.begin(), labels.end());
  p.k_ = k;
  return p;
}

std::vector<double> KnnProbe::score(const Matrix& embeddings) const {
  if (embeddings.cols != train_.cols)
    throw FitError("knn probe: embedding width mismatch");
  const Matrix z = std_.apply(embeddings);
  std::vector<double> out(static_cast<size_t>(z.rows));
  std::vector<std::pair<double, int64_t>> dist(static_cast<size_t>(train_.rows));
  for (int64_t i = 0; i < z.rows; ++i) {
    for (int64_t t = 0; t < train_.rows; ++t) {
      double s = 0.0;
      for (int64_t j = 0; j < z.cols; ++j) {
        const double d = z.at(i, j) - train_.at(t, j);
        s += d * d;
      }
      dist[static_cast<size_t>(t)] = {s, t};
    }
    std::partial_sort(dist.begin(), dist.begin() + k_, dist.end());  // ties to lower index
    double votes = 0.0;
    for (int64_t t = 0; t < k_; ++t)
      votes += static_cast<double>(labels_[static_cast<size_t>(dist[static_cast<size_t>(t)].second)]);
    out[static_cast<size_t>(i)] = votes / static_cast<double>(k_);
  }
  return out;
}

DecoderProbe DecoderProbe::fit(const Model& model, const Matrix& embeddings,
                               std::span<const int> labels, int64_t steps, double learning_rate) {
  if (embeddings.rows != static_cast<int64_t>(labels.size()))
    throw FitError("decoder probe: embeddings/labels length mismatch");
  if (embeddings.cols != model.config().model_dim)
    throw FitError("decoder probe: embeddings must have model_dim columns");
  if (steps < 0) throw FitError("decoder probe: steps must be >= 0");

  DecoderProbe p;
  p.dec_ = model.decoder().clone();
  if (steps == 0) return p;

  std::vector<int> y(labels.begin(), labels.end());
  Tensor params[6] = {p.dec_.ln_g, p.dec_.ln_b, p.dec_.w1, p.dec_.b1, p.dec_.w2, p.dec_.b2};
  std::vector<std::vector<double>> m(6), v(6);
  for (int i = 0; i < 6; ++i) {
    m[static_cast<size_t>(i)].assign(params[i].raw().size(), 0.0);
    v[static_cast<size_t>(i)].assign(params[i].raw().size(), 0.0);
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Tensor input = Tensor::from_matrix(embeddings);
  for (int64_t step = 0; step < steps; ++step) {
    for (Tensor& t : params) t.zero_grad();
    Tensor h = layer_norm(input, p.dec_.ln_g, p.dec_.ln_b, kLayerNormEps);
    Tensor logits =
        add_rowvec(matmul(gelu(add_rowvec(matmul(h, p.dec_.w1), p.dec_.b1)), p.dec_.w2), p.dec_.b2);
    Tensor loss = cross_entropy_with_logits(logits, y);
    const double lv = loss.item();
    if (!std::isfinite(lv))
      throw TrainError("decoder probe: non-finite loss at step " + std::to_string(step),
                       static_cast<long>(step), 0.0);
    p.curve_.push_back(lv);
    loss.backward();
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
    for (int i = 0; i < 6; ++i) {
      auto g = params[i].grad();
      auto x = params[i].raw();
      for (size_t j = 0; j < x.size(); ++j) {
        const double gj = g.empty() ? 0.0 : g[j];
        m[static_cast<size_t>(i)][j] = b1 * m[static_cast<size_t>(i)][j] + (1.0 - b1) * gj;
        v[static_cast<size_t>(i)][j] = b2 * v[static_cast<size_t>(i)][j] + (1.0 - b2) * gj * gj;
        x[j] -= learning_rate * (m[static_cast<size_t>(i)][j] / bc1) /
                (std::sqrt(v[static_cast<size_t>(i)][j] / bc2) + eps);
      }
    }
  }
  return p;
}

std::vector<double> DecoderProbe::score(const Matrix& embeddings) const {
  return logit_margins(decode_rows(dec_, embeddings));
}

int64_t TransferMatrix::missing_count() const {
  int64_t n = 0;
  for (const auto& c : cells)
    if (!c.has_value()) ++n;
  return n;
}

double TransferMatrix::upper_triangle_mean() const {
  double s = 0.0;
  int64_t n = 0;
  for (int64_t i = 0; i < depth; ++i)
    for (int64_t j = i + 1; j < depth; ++j)
      if (at(i, j)) {
        s += *at(i, j);
        ++n;
      }
  return n > 0 ? s / static_cast<double>(n) : 0.0;
}

double TransferMatrix::lower_triangle_mean() const {
  double s = 0.0;
  int64_t n = 0;
  for (int64_t i = 0; i < depth; ++i)
    for (int64_t j = 0; j < i; ++j)
      if (at(i, j)) {
        s += *at(i, j);
        ++n;
      }
  return n > 0 ? s / static_cast<double>(n) : 0.0;
}

EmbeddingStack extract_embeddings(const Model& model, const EpisodeView& view,
                                  const LayerPlan& plan) {
  ForwardResult r = model.forward(view, plan, true);
  return std::move(*r.stack);
}

TransferMatrix build_transfer_matrix(const EmbeddingStack& stack, ProbeKind kind,
                                     const Model* model, const ProbeOptions& opt) {
  if (kind == ProbeKind::kDecoder && model == nullptr)
    throw ConfigError("decoder transfer matrix needs the model");
  TransferMatrix tm;
  tm.depth = stack.depth();
  tm.cells.assign(static_cast<size_t>(tm.depth * tm.depth), std::nullopt);

  const int64_t np = stack.probe_rows;
  for (int64_t i = 0; i < tm.depth; ++i) {
    const Matrix& layer_i = stack.layers[static_cast<size_t>(i)];
    const Matrix train = take_rows(layer_i, 0, np);

    // One fitted probe per trained-on layer, evaluated everywhere.
    std::optional<LinearProbe> lin;
    std::optional<KnnProbe> knn;
    std::optional<DecoderProbe> dec;
    try {
      switch (kind) {
        case ProbeKind::kLinear:
          lin = LinearProbe::fit(train, stack.probe_labels, opt.linear_reg);
          lin->trained_on_layer = i;
          break;
        case ProbeKind::kKnn:
          knn = KnnProbe::fit(train, stack.probe_labels,
                              std::min<int64_t>(opt.knn_k, train.rows));
          knn->trained_on_layer = i;
          break;
        case ProbeKind::kDecoder:
          dec = DecoderProbe::fit(*model, train, stack.probe_labels, opt.decoder_steps,
                                  opt.decoder_lr);
          dec->trained_on_layer = i;
          break;
      }
    } catch (const std::runtime_error&) {
      continue;  // whole row missing
    }

    for (int64_t j = 0; j < tm.depth; ++j) {
      const Matrix eval =
          take_rows(stack.layers[static_cast<size_t>(j)], np,
                    stack.layers[static_cast<size_t>(j)].rows - np);
      try {
        std::vector<double> scores;
        if (lin)
          scores = lin->score(eval);
        else if (knn)
          scores = knn->score(eval);
        else
          scores = dec->score(eval);
        tm.at(i, j) = roc_auc(scores, stack.query_labels);
      } catch (const std::runtime_error&) {
        // cell stays missing
      }
    }
  }
  return tm;
}

}  // namespace layerlab

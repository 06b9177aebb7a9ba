#include "layerlab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "layerlab/errors.hpp"
#include "layerlab/rng.hpp"

namespace layerlab {

namespace {

constexpr char kMagic[4] = {'L', 'L', 'A', 'B'};
constexpr uint32_t kFormatVersion = 1;

Tensor init_weight(Rng& rng, int64_t fan_in, int64_t fan_out, double gain) {
  std::vector<double> data(static_cast<size_t>(fan_in * fan_out));
  const double std = gain / std::sqrt(static_cast<double>(fan_in));
  for (double& v : data) v = rng.gaussian(0.0, std);
  return Tensor::from_data({fan_in, fan_out}, std::move(data), true);
}

Tensor init_zeros(int64_t n) { return Tensor::zeros({n}, true); }
Tensor init_ones(int64_t n) { return Tensor::full({n}, 1.0, true); }

AttnParams init_attn(Rng& rng, int64_t d, double residual_gain) {
  AttnParams p;
  p.ln_g = init_ones(d);
  p.ln_b = init_zeros(d);
  p.wq = init_weight(rng, d, d, 1.0);
  p.bq = init_zeros(d);
  p.wk = init_weight(rng, d, d, 1.0);
  p.bk = init_zeros(d);
  p.wv = init_weight(rng, d, d, 1.0);
  p.bv = init_zeros(d);
  p.wo = init_weight(rng, d, d, residual_gain);
  p.bo = init_zeros(d);
  return p;
}

FfParams init_ff(Rng& rng, int64_t d, int64_t ff, double residual_gain) {
  FfParams p;
  p.ln_g = init_ones(d);
  p.ln_b = init_zeros(d);
  p.w1 = init_weight(rng, d, ff, 1.0);
  p.b1 = init_zeros(ff);
  p.w2 = init_weight(rng, ff, d, residual_gain);
  p.b2 = init_zeros(d);
  return p;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

Tensor row_block_forward(const RowBlock& blk, Tensor x, const Tensor& mask, int64_t heads) {
  Tensor h = layer_norm(x, blk.attn.ln_g, blk.attn.ln_b, kLayerNormEps);
  Tensor q = linear(h, blk.attn.wq, blk.attn.bq);
  Tensor k = linear(h, blk.attn.wk, blk.attn.bk);
  Tensor v = linear(h, blk.attn.wv, blk.attn.bv);
  Tensor a = multi_head_attention(q, k, v, mask, heads);
  x = add(x, linear(a, blk.attn.wo, blk.attn.bo));
  Tensor h2 = layer_norm(x, blk.ff.ln_g, blk.ff.ln_b, kLayerNormEps);
  Tensor f = linear(gelu(linear(h2, blk.ff.w1, blk.ff.b1)), blk.ff.w2, blk.ff.b2);
  return add(x, f);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kRow:
      return "row";
    case Variant::kDual:
      return "dual";
    case Variant::kTwoStage:
      return "two_stage";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "row") return Variant::kRow;
  if (name == "dual") return Variant::kDual;
  if (name == "two_stage") return Variant::kTwoStage;
  throw ConfigError("unknown model variant '" + name + "' (expected row, dual, two_stage)");
}

void ModelConfig::validate() const {
  if (layer_count < 2)
    throw ConfigError("layer_count must be >= 2, got " + std::to_string(layer_count));
  if (model_dim < 1) throw ConfigError("model_dim must be >= 1");
  if (head_count < 1 || model_dim % head_count != 0)
    throw ConfigError("head_count " + std::to_string(head_count) + " must divide model_dim " +
                      std::to_string(model_dim));
  if (ff_dim < 1) throw ConfigError("ff_dim must be >= 1");
  if (variant == Variant::kTwoStage && embed_stage_layers < 1)
    throw ConfigError("embed_stage_layers must be >= 1 for the two-stage variant");
  if (variant == Variant::kRow && max_features < 1)
    throw ConfigError("max_features must be >= 1 for the row variant");
}

DecoderParams DecoderParams::clone() const {
  auto copy = [](const Tensor& t) {
    return Tensor::from_data(t.shape(), std::vector<double>(t.values().begin(), t.values().end()),
                             true);
  };
  DecoderParams d;
  d.ln_g = copy(ln_g);
  d.ln_b = copy(ln_b);
  d.w1 = copy(w1);
  d.b1 = copy(b1);
  d.w2 = copy(w2);
  d.b2 = copy(b2);
  return d;
}

// --- layout -----------------------------------------------------------------

struct Model::Layout {
  int64_t n_support = 0;
  int64_t n_probe = 0;
  int64_t n_query = 0;
  int64_t n = 0;       // total rows
  int64_t d_f = 0;     // episode feature count
  int64_t cols = 0;    // kDual: cells per row (d_f + 1)
  Tensor icl_mask;     // (n x n)
  std::vector<std::vector<int64_t>> col_indices;  // kDual: cell index per column
  std::vector<int64_t> from_col_order;            // kDual: (row,col) order from per-column concat
  std::vector<int64_t> queryish_cells;            // kDual: label-column cells of query-side rows
};

namespace {

Tensor make_icl_mask(int64_t n_support, int64_t n) {
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(static_cast<size_t>(n * n), ninf);
  for (int64_t i = 0; i < n; ++i) {
    if (i < n_support) {
      for (int64_t j = 0; j < n_support; ++j) m[static_cast<size_t>(i * n + j)] = 0.0;
    } else {
      for (int64_t j = 0; j < n_support; ++j) m[static_cast<size_t>(i * n + j)] = 0.0;
      m[static_cast<size_t>(i * n + i)] = 0.0;  // self
    }
  }
  return Tensor::from_data({n, n}, std::move(m));
}

std::vector<int64_t> label_gather_indices(const EpisodeView& v) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(v.support_x.rows + v.probe_x.rows + v.query_x.rows));
  for (int y : v.support_y) idx.push_back(y);
  for (int64_t i = 0; i < v.probe_x.rows + v.query_x.rows; ++i) idx.push_back(2);
  return idx;
}

Matrix vstack_features(const EpisodeView& v, int64_t pad_to) {
  const int64_t n = v.support_x.rows + v.probe_x.rows + v.query_x.rows;
  Matrix out(n, pad_to);
  int64_t r = 0;
  for (const Matrix* m : {&v.support_x, &v.probe_x, &v.query_x}) {
    for (int64_t i = 0; i < m->rows; ++i, ++r)
      std::copy(m->row(i).begin(), m->row(i).end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

// --- encoder ----------------------------------------------------------------

Tensor Model::encode(const EpisodeView& view, Layout& lo) const {
  lo.n_support = view.support_x.rows;
  lo.n_probe = view.probe_x.rows;
  lo.n_query = view.query_x.rows;
  lo.n = lo.n_support + lo.n_probe + lo.n_query;
  lo.d_f = view.features();
  if (view.probe_x.cols != lo.d_f || view.query_x.cols != lo.d_f)
    throw ShapeError("episode partitions disagree on feature count");
  lo.icl_mask = make_icl_mask(lo.n_support, lo.n);
  const std::vector<int64_t> label_idx = label_gather_indices(view);

  switch (config_.variant) {
    case Variant::kRow: {
      if (lo.d_f > config_.max_features)
        throw ShapeError("episode has " + std::to_string(lo.d_f) +
                         " features but the model accepts at most " +
                         std::to_string(config_.max_features));
      Tensor x0 = Tensor::from_matrix(vstack_features(view, config_.max_features));
      Tensor tokens = linear(x0, feat_w_, feat_b_);
      return add(tokens, gather_rows(label_embed_, label_idx));
    }
    case Variant::kDual: {
      lo.cols = lo.d_f + 1;
      Matrix feats = vstack_features(view, lo.d_f);
      Tensor cells = Tensor::from_data({lo.n * lo.d_f, 1}, std::move(feats.v));
      Tensor feat_cells = linear(cells, cell_w_, cell_b_);          // (n*d_f x d)
      Tensor label_cells = gather_rows(label_embed_, label_idx);    // (n x d)
      Tensor combined = concat_rows({feat_cells, label_cells});
      std::vector<int64_t> order(static_cast<size_t>(lo.n * lo.cols));
      for (int64_t r = 0; r < lo.n; ++r) {
        for (int64_t c = 0; c < lo.d_f; ++c)
          order[static_cast<size_t>(r * lo.cols + c)] = r * lo.d_f + c;
        order[static_cast<size_t>(r * lo.cols + lo.d_f)] = lo.n * lo.d_f + r;
      }
      lo.col_indices.assign(static_cast<size_t>(lo.cols), {});
      for (int64_t c = 0; c < lo.cols; ++c) {
        auto& v = lo.col_indices[static_cast<size_t>(c)];
        v.resize(static_cast<size_t>(lo.n));
        for (int64_t r = 0; r < lo.n; ++r) v[static_cast<size_t>(r)] = r * lo.cols + c;
      }
      lo.from_col_order.resize(static_cast<size_t>(lo.n * lo.cols));
      for (int64_t r = 0; r < lo.n; ++r)
        for (int64_t c = 0; c < lo.cols; ++c)
          lo.from_col_order[static_cast<size_t>(r * lo.cols + c)] = c * lo.n + r;
      lo.queryish_cells.clear();
      for (int64_t r = lo.n_support; r < lo.n; ++r)
        lo.queryish_cells.push_back(r * lo.cols + lo.d_f);
      return gather_rows(combined, std::move(order));
    }
    case Variant::kTwoStage: {
      Matrix feats = vstack_features(view, lo.d_f);
      Tensor cells = Tensor::from_data({lo.n * lo.d_f, 1}, std::move(feats.v));
      Tensor cell_state = linear(cells, cell_w_, cell_b_);  // (n*d_f x d)
      Tensor none;                                          // unmasked set attention
      std::vector<Tensor> pooled;
      pooled.reserve(static_cast<size_t>(lo.n));
      for (int64_t r = 0; r < lo.n; ++r) {
        Tensor row_cells = slice_rows(cell_state, r * lo.d_f, lo.d_f);
        for (const RowBlock& blk : stage1_)
          row_cells = row_block_forward(blk, row_cells, none, config_.head_count);
        pooled.push_back(mean_rows(row_cells));
      }
      Tensor tokens = concat_rows(pooled);
      return add(tokens, gather_rows(label_embed_, label_idx));
    }
  }
  throw ConfigError("unreachable variant");
}

// --- blocks -----------------------------------------------------------------

Tensor Model::block_forward(int64_t block_index, const Tensor& state, const Layout& lo) const {
  if (config_.variant != Variant::kDual)
    return row_block_forward(row_blocks_[static_cast<size_t>(block_index)], state, lo.icl_mask,
                             config_.head_count);

  const DualBlock& blk = dual_blocks_[static_cast<size_t>(block_index)];
  const int64_t heads = config_.head_count;
  Tensor x = state;

  // Attention across the cells of each row.
  {
    Tensor h = layer_norm(x, blk.feat.ln_g, blk.feat.ln_b, kLayerNormEps);
    Tensor q = linear(h, blk.feat.wq, blk.feat.bq);
    Tensor k = linear(h, blk.feat.wk, blk.feat.bk);
    Tensor v = linear(h, blk.feat.wv, blk.feat.bv);
    Tensor none;
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(lo.n));
    for (int64_t r = 0; r < lo.n; ++r) {
      Tensor qr = slice_rows(q, r * lo.cols, lo.cols);
      Tensor kr = slice_rows(k, r * lo.cols, lo.cols);
      Tensor vr = slice_rows(v, r * lo.cols, lo.cols);
      outs.push_back(multi_head_attention(qr, kr, vr, none, heads));
    }
    Tensor delta = concat_rows(outs);  // already in (row, col) order
    x = add(x, linear(delta, blk.feat.wo, blk.feat.bo));
  }

  // Attention across rows within each column, masked like the row variant.
  {
    Tensor h = layer_norm(x, blk.row.ln_g, blk.row.ln_b, kLayerNormEps);
    Tensor q = linear(h, blk.row.wq, blk.row.bq);
    Tensor k = linear(h, blk.row.wk, blk.row.bk);
    Tensor v = linear(h, blk.row.wv, blk.row.bv);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(lo.cols));
    for (int64_t c = 0; c < lo.cols; ++c) {
      const auto& idx = lo.col_indices[static_cast<size_t>(c)];
      Tensor qc = gather_rows(q, idx);
      Tensor kc = gather_rows(k, idx);
      Tensor vc = gather_rows(v, idx);
      outs.push_back(multi_head_attention(qc, kc, vc, lo.icl_mask, heads));
    }
    Tensor delta = gather_rows(concat_rows(outs), lo.from_col_order);
    x = add(x, linear(delta, blk.row.wo, blk.row.bo));
  }

  Tensor h2 = layer_norm(x, blk.ff.ln_g, blk.ff.ln_b, kLayerNormEps);
  Tensor f = linear(gelu(linear(h2, blk.ff.w1, blk.ff.b1)), blk.ff.w2, blk.ff.b2);
  return add(x, f);
}

Matrix Model::capture_rows(const Tensor& state, const Layout& lo) const {
  const int64_t d = config_.model_dim;
  const int64_t rows = lo.n_probe + lo.n_query;
  Matrix out(rows, d);
  const auto sv = state.values();
  if (config_.variant == Variant::kDual) {
    for (int64_t i = 0; i < rows; ++i) {
      const int64_t cell = lo.queryish_cells[static_cast<size_t>(i)];
      std::copy(sv.begin() + cell * d, sv.begin() + (cell + 1) * d, out.row(i).begin());
    }
  } else {
    std::copy(sv.begin() + lo.n_support * d, sv.begin() + lo.n * d, out.v.begin());
  }
  return out;
}

Tensor Model::readout_rows(const Tensor& state, const Layout& lo) const {
  if (config_.variant == Variant::kDual) return gather_rows(state, lo.queryish_cells);
  return slice_rows(state, lo.n_support, lo.n_probe + lo.n_query);
}

Tensor Model::decode(const Tensor& rows, const DecoderParams& dec) const {
  Tensor h = layer_norm(rows, dec.ln_g, dec.ln_b, kLayerNormEps);
  return linear(gelu(linear(h, dec.w1, dec.b1)), dec.w2, dec.b2);
}

// --- construction -----------------------------------------------------------

Model Model::build(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;
  Rng rng(split_seed(config.seed, 0x6d6f64656cull));  // "model" stream

  const int64_t d = config.model_dim;
  const int64_t ff = config.ff_dim;
  const int64_t total_blocks =
      config.layer_count + (config.variant == Variant::kTwoStage ? config.embed_stage_layers : 0);
  // Residual writers are damped with depth so stacked blocks start near the
  // identity map.
  const double res_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(total_blocks));

  if (config.variant == Variant::kRow) {
    m.feat_w_ = init_weight(rng, config.max_features, d, 1.0);
    m.feat_b_ = init_zeros(d);
  } else {
    m.cell_w_ = init_weight(rng, 1, d, 1.0);
    m.cell_b_ = init_zeros(d);
  }
  m.label_embed_ = init_weight(rng, 3, d, std::sqrt(3.0));  // entries ~ N(0, 1)

  if (config.variant == Variant::kTwoStage)
    for (int64_t i = 0; i < config.embed_stage_layers; ++i)
      m.stage1_.push_back({init_attn(rng, d, res_gain), init_ff(rng, d, ff, res_gain)});

  for (int64_t i = 0; i < config.layer_count; ++i) {
    if (config.variant == Variant::kDual)
      m.dual_blocks_.push_back(
          {init_attn(rng, d, res_gain), init_attn(rng, d, res_gain), init_ff(rng, d, ff, res_gain)});
    else
      m.row_blocks_.push_back({init_attn(rng, d, res_gain), init_ff(rng, d, ff, res_gain)});
  }

  m.dec_.ln_g = init_ones(d);
  m.dec_.ln_b = init_zeros(d);
  m.dec_.w1 = init_weight(rng, d, ff, 1.0);
  m.dec_.b1 = init_zeros(ff);
  m.dec_.w2 = init_weight(rng, ff, 2, 0.01);  // near-uniform logits at init
  m.dec_.b2 = init_zeros(2);

  m.register_params();
  return m;
}

void Model::register_params() {
  params_.clear();
  auto reg = [&](const std::string& name, const Tensor& t) { params_.emplace_back(name, t); };
  auto reg_attn = [&](const std::string& p, const AttnParams& a) {
    reg(p + ".ln_g", a.ln_g);
    reg(p + ".ln_b", a.ln_b);
    reg(p + ".wq", a.wq);
    reg(p + ".bq", a.bq);
    reg(p + ".wk", a.wk);
    reg(p + ".bk", a.bk);
    reg(p + ".wv", a.wv);
    reg(p + ".bv", a.bv);
    reg(p + ".wo", a.wo);
    reg(p + ".bo", a.bo);
  };
  auto reg_ff = [&](const std::string& p, const FfParams& f) {
    reg(p + ".ln_g", f.ln_g);
    reg(p + ".ln_b", f.ln_b);
    reg(p + ".w1", f.w1);
    reg(p + ".b1", f.b1);
    reg(p + ".w2", f.w2);
    reg(p + ".b2", f.b2);
  };

  if (config_.variant == Variant::kRow) {
    reg("enc.feat.w", feat_w_);
    reg("enc.feat.b", feat_b_);
  } else {
    reg("enc.cell.w", cell_w_);
    reg("enc.cell.b", cell_b_);
  }
  reg("enc.label", label_embed_);
  for (size_t i = 0; i < stage1_.size(); ++i) {
    reg_attn("stage1." + std::to_string(i) + ".attn", stage1_[i].attn);
    reg_ff("stage1." + std::to_string(i) + ".ff", stage1_[i].ff);
  }
  for (size_t i = 0; i < row_blocks_.size(); ++i) {
    reg_attn("layer." + std::to_string(i) + ".attn", row_blocks_[i].attn);
    reg_ff("layer." + std::to_string(i) + ".ff", row_blocks_[i].ff);
  }
  for (size_t i = 0; i < dual_blocks_.size(); ++i) {
    reg_attn("layer." + std::to_string(i) + ".feat", dual_blocks_[i].feat);
    reg_attn("layer." + std::to_string(i) + ".row", dual_blocks_[i].row);
    reg_ff("layer." + std::to_string(i) + ".ff", dual_blocks_[i].ff);
  }
  reg("dec.ln_g", dec_.ln_g);
  reg("dec.ln_b", dec_.ln_b);
  reg("dec.w1", dec_.w1);
  reg("dec.b1", dec_.b1);
  reg("dec.w2", dec_.w2);
  reg("dec.b2", dec_.b2);
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

uint64_t Model::parameter_checksum() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : params_) {
    mix(name.data(), name.size());
    mix(t.values().data(), t.values().size() * sizeof(double));
  }
  return h;
}

// --- forward paths ----------------------------------------------------------

ForwardResult Model::forward(const EpisodeView& view, const LayerPlan& plan, bool capture) const {
  plan.validate(config_.layer_count);
  NoGradGuard ng;
  Layout lo;
  Tensor state = encode(view, lo);

  ForwardResult out;
  if (capture) {
    EmbeddingStack stack;
    stack.probe_rows = lo.n_probe;
    stack.probe_labels = view.probe_y;
    stack.query_labels = view.query_y;
    stack.layers.push_back(capture_rows(state, lo));
    out.stack = std::move(stack);
  }
  for (int64_t step : plan.steps) {
    state = block_forward(step, state, lo);
    if (out.stack) out.stack->layers.push_back(capture_rows(state, lo));
  }
  Matrix logits = decode(readout_rows(state, lo), dec_).to_matrix();
  out.probe_logits = Matrix(lo.n_probe, 2);
  out.query_logits = Matrix(lo.n_query, 2);
  std::copy(logits.v.begin(), logits.v.begin() + lo.n_probe * 2, out.probe_logits.v.begin());
  std::copy(logits.v.begin() + lo.n_probe * 2, logits.v.end(), out.query_logits.v.begin());
  return out;
}

ForwardResult Model::forward_plain(const EpisodeView& view) const {
  NoGradGuard ng;
  Layout lo;
  Tensor state = encode(view, lo);
  for (int64_t l = 0; l < config_.layer_count; ++l) state = block_forward(l, state, lo);
  Matrix logits = decode(readout_rows(state, lo), dec_).to_matrix();
  ForwardResult out;
  out.probe_logits = Matrix(lo.n_probe, 2);
  out.query_logits = Matrix(lo.n_query, 2);
  std::copy(logits.v.begin(), logits.v.begin() + lo.n_probe * 2, out.probe_logits.v.begin());
  std::copy(logits.v.begin() + lo.n_probe * 2, logits.v.end(), out.query_logits.v.begin());
  return out;
}

ForwardResult Model::forward_early_exit(const EpisodeView& view, int64_t exit_after,
                                        const DecoderParams* decoder_override) const {
  if (exit_after < 0 || exit_after >= config_.layer_count)
    throw PlanError("early-exit layer " + std::to_string(exit_after) + " out of range [0, " +
                    std::to_string(config_.layer_count) + ")");
  NoGradGuard ng;
  Layout lo;
  Tensor state = encode(view, lo);
  for (int64_t l = 0; l <= exit_after; ++l) state = block_forward(l, state, lo);
  const DecoderParams& dec = decoder_override ? *decoder_override : dec_;
  Matrix logits = decode(readout_rows(state, lo), dec).to_matrix();
  ForwardResult out;
  out.probe_logits = Matrix(lo.n_probe, 2);
  out.query_logits = Matrix(lo.n_query, 2);
  std::copy(logits.v.begin(), logits.v.begin() + lo.n_probe * 2, out.probe_logits.v.begin());
  std::copy(logits.v.begin() + lo.n_probe * 2, logits.v.end(), out.query_logits.v.begin());
  return out;
}

Matrix Model::decode_embeddings(const Matrix& embeddings) const {
  return decode_rows(dec_, embeddings);
}

Matrix decode_rows(const DecoderParams& dec, const Matrix& embeddings) {
  NoGradGuard ng;
  Tensor rows = Tensor::from_matrix(embeddings);
  Tensor h = layer_norm(rows, dec.ln_g, dec.ln_b, kLayerNormEps);
  Tensor out = add_rowvec(matmul(gelu(add_rowvec(matmul(h, dec.w1), dec.b1)), dec.w2), dec.b2);
  return out.to_matrix();
}

std::vector<double> logit_margins(const Matrix& logits) {
  std::vector<double> s(static_cast<size_t>(logits.rows));
  for (int64_t i = 0; i < logits.rows; ++i) s[static_cast<size_t>(i)] = logits.at(i, 1) - logits.at(i, 0);
  return s;
}

Tensor Model::training_loss(const EpisodeView& view, const LayerPlan& plan) const {
  plan.validate(config_.layer_count);
  Layout lo;
  Tensor state = encode(view, lo);
  for (int64_t step : plan.steps) state = block_forward(step, state, lo);
  Tensor logits = decode(readout_rows(state, lo), dec_);
  std::vector<int> labels;
  labels.reserve(view.probe_y.size() + view.query_y.size());
  labels.insert(labels.end(), view.probe_y.begin(), view.probe_y.end());
  labels.insert(labels.end(), view.query_y.begin(), view.query_y.end());
  return cross_entropy_with_logits(logits, labels);
}

// --- training ---------------------------------------------------------------

std::vector<double> Model::train(const TaskPrior& prior, const TrainOptions& opt) {
  if (opt.steps < 0) throw ConfigError("train: steps must be >= 0");
  if (opt.batch_tasks < 1) throw ConfigError("train: batch_tasks must be >= 1");
  if (opt.learning_rate < 0.0) throw ConfigError("train: learning_rate must be >= 0");

  const LayerPlan identity = plan_identity(config_.layer_count);
  std::vector<std::vector<double>> adam_m(params_.size()), adam_v(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    adam_m[i].assign(static_cast<size_t>(params_[i].second.size()), 0.0);
    adam_v[i].assign(static_cast<size_t>(params_[i].second.size()), 0.0);
  }

  auto grad_norm = [&]() {
    double s = 0.0;
    for (auto& [name, p] : params_)
      for (double g : p.grad()) s += g * g;
    return std::sqrt(s);
  };

  std::vector<double> curve;
  curve.reserve(static_cast<size_t>(opt.steps));
  const double pi = 3.14159265358979323846;
  for (int64_t step = 0; step < opt.steps; ++step) {
    const double lr_t =
        opt.learning_rate * 0.5 *
        (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(opt.steps)));
    for (auto& [name, p] : params_) p.zero_grad();

    double mean_ce = 0.0;
    for (int64_t b = 0; b < opt.batch_tasks; ++b) {
      const uint64_t cell = static_cast<uint64_t>(step) * static_cast<uint64_t>(opt.batch_tasks) +
                            static_cast<uint64_t>(b);
      Table task = sample_task(prior, split_seed(opt.seed, cell));
      Episode ep = split_episode(std::make_shared<Table>(std::move(task)), opt.support_fraction,
                                 opt.probe_fraction, split_seed(opt.seed, cell, 1));
      EpisodeView view = materialize(ep);
      Tensor loss = training_loss(view, identity);
      const double v = loss.item();
      if (!std::isfinite(v))
        throw TrainError("non-finite loss at step " + std::to_string(step) +
                             " (grad norm " + std::to_string(grad_norm()) + ")",
                         static_cast<long>(step), grad_norm());
      mean_ce += v / static_cast<double>(opt.batch_tasks);
      scale(loss, 1.0 / static_cast<double>(opt.batch_tasks)).backward();
    }

    const double gnorm = grad_norm();
    if (!std::isfinite(gnorm))
      throw TrainError("non-finite gradient at step " + std::to_string(step) + " (grad norm " +
                           std::to_string(gnorm) + ")",
                       static_cast<long>(step), gnorm);
    const double clip =
        (opt.clip_norm > 0.0 && gnorm > opt.clip_norm) ? opt.clip_norm / gnorm : 1.0;

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(opt.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(opt.adam_beta2, t);
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i].second;
      auto g = p.grad();
      auto x = p.raw();
      for (size_t j = 0; j < x.size(); ++j) {
        const double gj = g.empty() ? 0.0 : g[j] * clip;
        adam_m[i][j] = opt.adam_beta1 * adam_m[i][j] + (1.0 - opt.adam_beta1) * gj;
        adam_v[i][j] = opt.adam_beta2 * adam_v[i][j] + (1.0 - opt.adam_beta2) * gj * gj;
        const double mhat = adam_m[i][j] / bc1;
        const double vhat = adam_v[i][j] / bc2;
        x[j] -= lr_t * mhat / (std::sqrt(vhat) + opt.adam_eps);
      }
    }
    curve.push_back(mean_ce);
  }
  return curve;
}

// --- serialization ----------------------------------------------------------

namespace {

void wr(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void wr_u32(std::ostream& os, uint32_t v) { wr(os, &v, 4); }
void wr_i64(std::ostream& os, int64_t v) { wr(os, &v, 8); }
void wr_u64(std::ostream& os, uint64_t v) { wr(os, &v, 8); }

void rd(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw IoError("checkpoint truncated");
}
uint32_t rd_u32(std::istream& is) {
  uint32_t v;
  rd(is, &v, 4);
  return v;
}
int64_t rd_i64(std::istream& is) {
  int64_t v;
  rd(is, &v, 8);
  return v;
}
uint64_t rd_u64(std::istream& is) {
  uint64_t v;
  rd(is, &v, 8);
  return v;
}

}  // namespace

void Model::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  wr(os, kMagic, 4);
  wr_u32(os, kFormatVersion);
  wr_u32(os, static_cast<uint32_t>(config_.variant));
  wr_i64(os, config_.layer_count);
  wr_i64(os, config_.model_dim);
  wr_i64(os, config_.head_count);
  wr_i64(os, config_.ff_dim);
  wr_i64(os, config_.embed_stage_layers);
  wr_i64(os, config_.max_features);
  wr_u64(os, config_.seed);
  wr_u32(os, static_cast<uint32_t>(params_.size()));
  for (const auto& [name, t] : params_) {
    wr_u32(os, static_cast<uint32_t>(name.size()));
    wr(os, name.data(), name.size());
    wr_u32(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) wr_i64(os, d);
    wr(os, t.values().data(), t.values().size() * sizeof(double));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  rd(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a model checkpoint (bad magic): " + path.string());
  const uint32_t version = rd_u32(is);
  if (version != kFormatVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  const uint32_t variant = rd_u32(is);
  if (variant > 2) throw IoError("checkpoint has invalid variant tag");
  cfg.variant = static_cast<Variant>(variant);
  cfg.layer_count = rd_i64(is);
  cfg.model_dim = rd_i64(is);
  cfg.head_count = rd_i64(is);
  cfg.ff_dim = rd_i64(is);
  cfg.embed_stage_layers = rd_i64(is);
  cfg.max_features = rd_i64(is);
  cfg.seed = rd_u64(is);

  Model m = build(cfg);
  std::map<std::string, Tensor> by_name(m.params_.begin(), m.params_.end());
  const uint32_t count = rd_u32(is);
  if (count != m.params_.size())
    throw IoError("checkpoint has " + std::to_string(count) + " parameter blocks, expected " +
                  std::to_string(m.params_.size()));
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = rd_u32(is);
    std::string name(name_len, '\0');
    rd(is, name.data(), name_len);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint has unknown parameter block '" + name + "'");
    const uint32_t rank = rd_u32(is);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = rd_i64(is);
    if (shape != it->second.shape())
      throw IoError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                    ", expected " + shape_str(it->second.shape()));
    rd(is, it->second.raw().data(), it->second.raw().size() * sizeof(double));
  }
  return m;
}

}  // namespace layerlab

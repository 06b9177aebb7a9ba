#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "layerlab/prior.hpp"
#include "layerlab/surgery.hpp"
#include "layerlab/table.hpp"
#include "layerlab/tensor.hpp"

namespace layerlab {

enum class Variant { kRow, kDual, kTwoStage };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::kRow;
  int64_t layer_count = 4;        // L: surgerable blocks (ICL stage for kTwoStage)
  int64_t model_dim = 32;         // d
  int64_t head_count = 4;
  int64_t ff_dim = 64;
  int64_t embed_stage_layers = 2;  // kTwoStage only
  int64_t max_features = 16;       // kRow input padding width
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Per-layer hidden states of the query-side rows (probe-train rows first,
// then query rows). layers[0] is the encoder output; layers[k] the state
// after the k-th executed plan step. States are residual-stream values taken
// after each block, before any final normalization.
struct EmbeddingStack {
  std::vector<Matrix> layers;
  int64_t probe_rows = 0;
  std::vector<int> probe_labels;
  std::vector<int> query_labels;

  int64_t depth() const { return static_cast<int64_t>(layers.size()); }
};

struct ForwardResult {
  Matrix probe_logits;  // (probe rows x 2)
  Matrix query_logits;  // (query rows x 2)
  std::optional<EmbeddingStack> stack;
};

struct DecoderParams {
  Tensor ln_g, ln_b, w1, b1, w2, b2;
  DecoderParams clone() const;
};

struct AttnParams {
  Tensor ln_g, ln_b, wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfParams {
  Tensor ln_g, ln_b, w1, b1, w2, b2;
};

struct RowBlock {
  AttnParams attn;
  FfParams ff;
};

struct DualBlock {
  AttnParams feat;  // attention across the cells of one row
  AttnParams row;   // attention across rows within one column
  FfParams ff;
};

struct TrainOptions {
  int64_t steps = 1000;
  int64_t batch_tasks = 4;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
  double support_fraction = 0.5;
  double probe_fraction = 0.25;  // loss is taken on probe + query rows
  double clip_norm = 1.0;        // global gradient-norm clip; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

// An ICL transformer: encoder, an ordered sequence of individually
// addressable layer blocks, and a two-class decoder. Support rows carry a
// learned label embedding; query-side rows a learned unknown-label embedding.
// There are no positional encodings; the attention mask gives support tokens
// access to support only, and query-side tokens access to support plus
// themselves, so predictions are per-query independent.
class Model {
 public:
  static Model build(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  int64_t layer_count() const { return config_.layer_count; }
  const DecoderParams& decoder() const { return dec_; }

  // Ordered (name, tensor) parameter list; order is fixed by construction.
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return params_; }
  int64_t parameter_count() const;
  uint64_t parameter_checksum() const;

  // Runs encoder, then layer blocks in plan order, then the decoder.
  ForwardResult forward(const EpisodeView& view, const LayerPlan& plan, bool capture) const;

  // Reference forward without plan machinery: blocks in natural order.
  ForwardResult forward_plain(const EpisodeView& view) const;

  // Runs blocks [0..exit_after] and applies the decoder there (the original
  // one unless an override is supplied).
  ForwardResult forward_early_exit(const EpisodeView& view, int64_t exit_after,
                                   const DecoderParams* decoder_override = nullptr) const;

  // Decoder applied to raw embedding rows (early-exit readout over a stack).
  Matrix decode_embeddings(const Matrix& embeddings) const;

  // Graph-recording loss over probe + query rows; used by train() and by
  // gradient checks.
  Tensor training_loss(const EpisodeView& view, const LayerPlan& plan) const;

  // Minimizes query cross-entropy over freshly sampled tasks; returns the
  // per-step mean loss. Throws TrainError on a non-finite loss.
  std::vector<double> train(const TaskPrior& prior, const TrainOptions& opt);

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  Model() = default;

  struct Layout;
  Tensor encode(const EpisodeView& view, Layout& layout) const;
  Tensor block_forward(int64_t block_index, const Tensor& state, const Layout& layout) const;
  Matrix capture_rows(const Tensor& state, const Layout& layout) const;
  Tensor readout_rows(const Tensor& state, const Layout& layout) const;
  Tensor decode(const Tensor& rows, const DecoderParams& dec) const;
  void register_params();

  ModelConfig config_;
  Tensor feat_w_, feat_b_;    // kRow row embedding
  Tensor cell_w_, cell_b_;    // kDual / kTwoStage cell embedding
  Tensor label_embed_;        // (3 x d): label 0, label 1, unknown
  std::vector<RowBlock> stage1_;      // kTwoStage tabular-embedding stage
  std::vector<RowBlock> row_blocks_;  // kRow / kTwoStage ICL blocks
  std::vector<DualBlock> dual_blocks_;
  DecoderParams dec_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

// Decoder MLP applied to plain embedding rows.
Matrix decode_rows(const DecoderParams& dec, const Matrix& embeddings);

// Per-row score used everywhere a ranking is needed: logit(1) - logit(0).
std::vector<double> logit_margins(const Matrix& logits);

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace layerlab

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "layerlab/matrix.hpp"

namespace layerlab {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // accumulates this node's grad into parents

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Whether newly created ops record the backward graph (thread-local).
bool grad_enabled();

// Disables graph recording for the enclosing scope. Inference paths use this
// so intermediates free eagerly and forward passes stay read-only.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense 64-bit float tensor with reverse-mode autodiff over a recorded tape.
// Values are immutable once the tensor participates in a graph; gradients
// accumulate into leaf tensors on backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor from_matrix(const Matrix& m, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return node_->size(); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  // In-place mutation for parameter init and optimizer steps. Must not be
  // called on a tensor inside a live graph.
  std::span<double> raw() { return node_->value; }

  std::span<const double> grad() const { return node_->grad; }
  void ensure_grad() { node_->ensure_grad(); }
  void zero_grad();

  double item() const;
  Matrix to_matrix() const;  // rank-2 only

  // Reverse-mode pass from a scalar root; seeds d(root)/d(root) = 1.
  void backward();

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// --- operations -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // (r x c) + (c)
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise
Tensor scale(const Tensor& a, double c);

Tensor gelu(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor slice_rows(const Tensor& a, int64_t start, int64_t count);
Tensor slice_cols(const Tensor& a, int64_t start, int64_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, std::vector<int64_t> indices);
Tensor mean_rows(const Tensor& a);  // (r x c) -> (1 x c)

// Scaled dot-product attention over head_count column blocks. An undefined
// mask means every query may attend to every key; otherwise mask has shape
// (q rows x k rows) with 0 for allowed pairs and -inf for disallowed ones,
// which makes disallowed attention weights exactly zero.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& mask, int64_t head_count);

// Mean over rows of (logsumexp(row) - row[label]); labels index columns.
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace layerlab

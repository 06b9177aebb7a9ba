#include "layerlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "layerlab/errors.hpp"

namespace layerlab {

namespace {

thread_local bool g_grad_enabled = true;

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

NodePtr make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

bool any_requires_grad(const std::vector<Tensor>& parents) {
  if (!g_grad_enabled) return false;
  for (const auto& p : parents)
    if (p.requires_grad()) return true;
  return false;
}

// Wires a result node into the graph. `backprop` receives the finished output
// node; it must accumulate out->grad into the parents' grads.
Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                   const std::function<void(TensorNode*)>& backprop) {
  NodePtr out = make_node(std::move(shape), std::move(value));
  if (any_requires_grad(parents)) {
    out->requires_grad = true;
    for (const auto& p : parents) out->parents.push_back(p.node_ptr());
    TensorNode* raw = out.get();
    out->backprop = [raw, backprop]() { backprop(raw); };
  }
  return Tensor(out);
}

void check_rank2(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 2)
    throw ShapeError(std::string(what) + " must be a rank-2 tensor, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
}

// --- raw matmul kernels (row-major) ----------------------------------------

// C (m x n) += or = A (m x k) * B (k x n)
void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
           bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x n) += A (m x k) * B^T, with B given as (n x k)
void mm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
           bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

// C (m x n) += A^T * B, with A given as (k x m), B as (k x n)
void mm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
           bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (int64_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// --- Tensor basics ----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  auto node = make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  int64_t n = shape_numel(shape);
  auto node = make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("from_data: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  auto node = make_node(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
  return from_data({m.rows, m.cols}, m.v, requires_grad);
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

Matrix Tensor::to_matrix() const {
  check_rank2(*this, "to_matrix input");
  return Matrix(dim(0), dim(1), node_->value);
}

void Tensor::backward() {
  if (!node_) throw ShapeError("backward() on undefined tensor");
  if (size() != 1) throw ShapeError("backward() requires a scalar root, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reverse order is a valid topological order.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [cur, idx] = stack.back();
    if (idx < cur->parents.size()) {
      TensorNode* p = cur->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop();
  }
}

// --- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul lhs");
  check_rank2(b, "matmul rhs");
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m * n));
  mm_nn(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    TensorNode* pb = o->parents[1].get();
    if (pa->requires_grad) {
      pa->ensure_grad();
      mm_nt(o->grad.data(), pb->value.data(), pa->grad.data(), m, n, k, true);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB (k x n) = A^T (k x m) * dC (m x n)
      mm_tn(pa->value.data(), o->grad.data(), pb->grad.data(), k, m, n, true);
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose input");
  const int64_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(static_cast<size_t>(r * c));
  const auto av = a.values();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j * r + i)] = av[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [r, c](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t j = 0; j < c; ++j)
      for (int64_t i = 0; i < r; ++i) pa->grad[static_cast<size_t>(i * c + j)] += o->grad[static_cast<size_t>(j * r + i)];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorNode* o) {
    for (int side = 0; side < 2; ++side) {
      TensorNode* p = o->parents[static_cast<size_t>(side)].get();
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) p->grad[i] += o->grad[i];
    }
  });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  check_rank2(m, "add_rowvec lhs");
  if (v.rank() != 1 || v.dim(0) != m.dim(1))
    throw ShapeError("add_rowvec shape mismatch: " + shape_str(m.shape()) + " + " +
                     shape_str(v.shape()));
  const int64_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(m.values().begin(), m.values().end());
  const auto vv = v.values();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(i * c + j)] += vv[j];
  return make_result({r, c}, std::move(out), {m, v}, [r, c](TensorNode* o) {
    TensorNode* pm = o->parents[0].get();
    TensorNode* pv = o->parents[1].get();
    if (pm->requires_grad) {
      pm->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pm->grad[i] += o->grad[i];
    }
    if (pv->requires_grad) {
      pv->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) pv->grad[static_cast<size_t>(j)] += o->grad[static_cast<size_t>(i * c + j)];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    TensorNode* pb = o->parents[1].get();
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pb->grad[i] -= o->grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    TensorNode* pb = o->parents[1].get();
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pb->grad[i] += o->grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= c;
  return make_result(a.shape(), std::move(out), {a}, [c](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += c * o->grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  // Exact form: 0.5 x (1 + erf(x / sqrt(2))).
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  return make_result(a.shape(), std::move(out), {a}, [](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) {
      const double x = pa->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      pa->grad[i] += o->grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor softmax(const Tensor& a, int axis) {
  const int r = a.rank();
  if (axis < 0 || axis >= r)
    throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(a.shape()));
  const auto& sh = a.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= sh[static_cast<size_t>(i)];
  const int64_t n = sh[static_cast<size_t>(axis)];

  std::vector<double> out(a.values().begin(), a.values().end());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      double* base = out.data() + o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < n; ++j) mx = std::max(mx, base[j * inner]);
      double sum = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        double e = std::exp(base[j * inner] - mx);
        base[j * inner] = e;
        sum += e;
      }
      for (int64_t j = 0; j < n; ++j) base[j * inner] /= sum;
    }
  }
  return make_result(a.shape(), std::move(out), {a}, [outer, inner, n](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t ob = 0; ob < outer; ++ob) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t off = ob * n * inner + in;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j)
          dot += o->value[static_cast<size_t>(off + j * inner)] * o->grad[static_cast<size_t>(off + j * inner)];
        for (int64_t j = 0; j < n; ++j) {
          const size_t idx = static_cast<size_t>(off + j * inner);
          pa->grad[idx] += o->value[idx] * (o->grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm input must have rank >= 1");
  const int64_t n = x.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n)
    throw ShapeError("layer_norm gain/bias must be rank-1 of length " + std::to_string(n));
  if (eps <= 0.0) throw ShapeError("layer_norm eps must be > 0");
  const int64_t rows = x.size() / n;

  std::vector<double> out(static_cast<size_t>(x.size()));
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double* orow = out.data() + r * n;
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < n; ++j) orow[j] = gv[j] * (xr[j] - mean) * inv + bv[j];
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias}, [rows, n, eps](TensorNode* o) {
    TensorNode* px = o->parents[0].get();
    TensorNode* pg = o->parents[1].get();
    TensorNode* pb = o->parents[2].get();
    if (px->requires_grad) px->ensure_grad();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    const double dn = static_cast<double>(n);
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = px->value.data() + r * n;
      const double* go = o->grad.data() + r * n;
      double mean = 0.0;
      for (int64_t j = 0; j < n; ++j) mean += xr[j];
      mean /= dn;
      double var = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        const double d = xr[j] - mean;
        var += d * d;
      }
      var /= dn;
      const double inv = 1.0 / std::sqrt(var + eps);
      if (pg->requires_grad || pb->requires_grad) {
        for (int64_t j = 0; j < n; ++j) {
          const double xhat = (xr[j] - mean) * inv;
          if (pg->requires_grad) pg->grad[static_cast<size_t>(j)] += go[j] * xhat;
          if (pb->requires_grad) pb->grad[static_cast<size_t>(j)] += go[j];
        }
      }
      if (px->requires_grad) {
        // dxhat = go * g; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          const double xhat = (xr[j] - mean) * inv;
          const double dxhat = go[j] * pg->value[static_cast<size_t>(j)];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        const double m1 = sum_dxhat / dn;
        const double m2 = sum_dxhat_xhat / dn;
        for (int64_t j = 0; j < n; ++j) {
          const double xhat = (xr[j] - mean) * inv;
          const double dxhat = go[j] * pg->value[static_cast<size_t>(j)];
          px->grad[static_cast<size_t>(r * n + j)] += inv * (dxhat - m1 - xhat * m2);
        }
      }
    }
  });
}

Tensor slice_rows(const Tensor& a, int64_t start, int64_t count) {
  check_rank2(a, "slice_rows input");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (start < 0 || count < 0 || start + count > r)
    throw ShapeError("slice_rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(a.shape()));
  std::vector<double> out(a.values().begin() + start * c, a.values().begin() + (start + count) * c);
  return make_result({count, c}, std::move(out), {a}, [start, c](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[static_cast<size_t>(start * c) + i] += o->grad[i];
  });
}

Tensor slice_cols(const Tensor& a, int64_t start, int64_t count) {
  check_rank2(a, "slice_cols input");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (start < 0 || count < 0 || start + count > c)
    throw ShapeError("slice_cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(a.shape()));
  std::vector<double> out(static_cast<size_t>(r * count));
  const auto av = a.values();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < count; ++j)
      out[static_cast<size_t>(i * count + j)] = av[i * c + start + j];
  return make_result({r, count}, std::move(out), {a}, [r, c, start, count](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < count; ++j)
        pa->grad[static_cast<size_t>(i * c + start + j)] += o->grad[static_cast<size_t>(i * count + j)];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
  const int64_t c = parts[0].defined() && parts[0].rank() == 2 ? parts[0].dim(1) : -1;
  int64_t rows = 0;
  for (const auto& p : parts) {
    check_rank2(p, "concat_rows part");
    if (p.dim(1) != c)
      throw ShapeError("concat_rows column mismatch: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows * c));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result({rows, c}, std::move(out), parts, [](TensorNode* o) {
    size_t off = 0;
    for (auto& pp : o->parents) {
      TensorNode* p = pp.get();
      const size_t len = p->value.size();
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < len; ++i) p->grad[i] += o->grad[off + i];
      }
      off += len;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
  const int64_t r = parts[0].defined() && parts[0].rank() == 2 ? parts[0].dim(0) : -1;
  int64_t cols = 0;
  for (const auto& p : parts) {
    check_rank2(p, "concat_cols part");
    if (p.dim(0) != r)
      throw ShapeError("concat_cols row mismatch: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    cols += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(r * cols));
  int64_t coff = 0;
  for (const auto& p : parts) {
    const int64_t pc = p.dim(1);
    const auto pv = p.values();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < pc; ++j)
        out[static_cast<size_t>(i * cols + coff + j)] = pv[i * pc + j];
    coff += pc;
  }
  return make_result({r, cols}, std::move(out), parts, [r, cols](TensorNode* o) {
    int64_t coff = 0;
    for (auto& pp : o->parents) {
      TensorNode* p = pp.get();
      const int64_t pc = p->shape[1];
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < pc; ++j)
            p->grad[static_cast<size_t>(i * pc + j)] += o->grad[static_cast<size_t>(i * cols + coff + j)];
      }
      coff += pc;
    }
  });
}

Tensor gather_rows(const Tensor& a, std::vector<int64_t> indices) {
  check_rank2(a, "gather_rows input");
  const int64_t r = a.dim(0), c = a.dim(1);
  for (int64_t idx : indices)
    if (idx < 0 || idx >= r)
      throw ShapeError("gather_rows index " + std::to_string(idx) + " out of range for " +
                       shape_str(a.shape()));
  const int64_t m = static_cast<int64_t>(indices.size());
  std::vector<double> out(static_cast<size_t>(m * c));
  const auto av = a.values();
  for (int64_t i = 0; i < m; ++i)
    std::copy(av.begin() + indices[static_cast<size_t>(i)] * c,
              av.begin() + (indices[static_cast<size_t>(i)] + 1) * c, out.begin() + i * c);
  return make_result({m, c}, std::move(out), {a},
                     [idx = std::move(indices), c](TensorNode* o) {
                       TensorNode* pa = o->parents[0].get();
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t i = 0; i < idx.size(); ++i)
                         for (int64_t j = 0; j < c; ++j)
                           pa->grad[static_cast<size_t>(idx[i] * c + j)] +=
                               o->grad[i * static_cast<size_t>(c) + static_cast<size_t>(j)];
                     });
}

Tensor mean_rows(const Tensor& a) {
  check_rank2(a, "mean_rows input");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (r == 0) throw ShapeError("mean_rows of empty tensor");
  std::vector<double> out(static_cast<size_t>(c), 0.0);
  const auto av = a.values();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j)] += av[i * c + j];
  for (double& x : out) x /= static_cast<double>(r);
  return make_result({1, c}, std::move(out), {a}, [r, c](TensorNode* o) {
    TensorNode* pa = o->parents[0].get();
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const double inv = 1.0 / static_cast<double>(r);
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j)
        pa->grad[static_cast<size_t>(i * c + j)] += o->grad[static_cast<size_t>(j)] * inv;
  });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& mask, int64_t head_count) {
  check_rank2(q, "attention q");
  check_rank2(k, "attention k");
  check_rank2(v, "attention v");
  const int64_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d)
    throw ShapeError("attention q/k/v column mismatch: " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  if (k.dim(0) != v.dim(0))
    throw ShapeError("attention k/v row mismatch: " + shape_str(k.shape()) + " vs " +
                     shape_str(v.shape()));
  if (head_count <= 0 || d % head_count != 0)
    throw ShapeError("head count " + std::to_string(head_count) + " must divide model dim " +
                     std::to_string(d));
  if (mask.defined() &&
      (mask.rank() != 2 || mask.dim(0) != q.dim(0) || mask.dim(1) != k.dim(0)))
    throw ShapeError("attention mask shape " + shape_str(mask.shape()) + " does not match (" +
                     std::to_string(q.dim(0)) + " x " + std::to_string(k.dim(0)) + ")");

  const int64_t dh = d / head_count;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(head_count));
  for (int64_t h = 0; h < head_count; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    if (mask.defined()) scores = add(scores, mask);
    Tensor attn = softmax(scores, 1);
    heads.push_back(matmul(attn, vh));
  }
  return head_count == 1 ? heads[0] : concat_cols(heads);
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
  check_rank2(logits, "cross_entropy logits");
  const int64_t r = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != r)
    throw ShapeError("cross_entropy labels length " + std::to_string(labels.size()) +
                     " does not match logits rows " + std::to_string(r));
  for (int y : labels)
    if (y < 0 || y >= c) throw ShapeError("cross_entropy label out of range: " + std::to_string(y));
  const auto lv = logits.values();
  double loss = 0.0;
  for (int64_t i = 0; i < r; ++i) {
    const double* row = lv.data() + i * c;
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    loss += mx + std::log(sum) - row[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<double>(r);
  return make_result({1}, {loss}, {logits}, [labels, r, c](TensorNode* o) {
    TensorNode* pl = o->parents[0].get();
    if (!pl->requires_grad) return;
    pl->ensure_grad();
    const double gout = o->grad[0] / static_cast<double>(r);
    for (int64_t i = 0; i < r; ++i) {
      const double* row = pl->value.data() + i * c;
      double mx = row[0];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
      for (int64_t j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - mx) / sum;
        const double onehot = (j == labels[static_cast<size_t>(i)]) ? 1.0 : 0.0;
        pl->grad[static_cast<size_t>(i * c + j)] += gout * (p - onehot);
      }
    }
  });
}

}  // namespace layerlab

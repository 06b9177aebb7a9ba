#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace layerlab {

// Plain row-major matrix for data plumbing (tables, embeddings, logits).
// Differentiable compute lives in Tensor; this type never carries gradients.
struct Matrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}
  Matrix(int64_t r, int64_t c, std::vector<double> data)
      : rows(r), cols(c), v(std::move(data)) {}

  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }

  std::span<double> row(int64_t r) {
    return std::span<double>(v.data() + r * cols, static_cast<size_t>(cols));
  }
  std::span<const double> row(int64_t r) const {
    return std::span<const double>(v.data() + r * cols, static_cast<size_t>(cols));
  }

  bool empty() const { return rows == 0 || cols == 0; }
};

}  // namespace layerlab

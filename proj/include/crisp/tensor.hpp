// SPDX-License-Identifier: Apache-2.0
//
// Dense primitives shared by every other module.
//
// Canonical pruning layout: a weight matrix has one row per output channel
// (S rows) and one column per reduction element (K = h*w*r columns).
// Activations are batch x K, so a layer computes out = acts * W^T.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "crisp/error.hpp"

namespace crisp {

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  // Throws DimensionError if values.size() != rows * cols.
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool all_finite() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Binary keep/prune flags, same shape as the matrix being masked.
class PruneMask {
 public:
  PruneMask() = default;
  PruneMask(std::size_t rows, std::size_t cols, bool fill = true);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return bits_.size(); }

  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool keep) { bits_[r * cols_ + c] = keep ? 1 : 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t count_kept() const;

  friend bool operator==(const PruneMask&, const PruneMask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct ConvShape {
  std::size_t h = 1;  // kernel height
  std::size_t w = 1;  // kernel width
  std::size_t r = 1;  // input channels
  std::size_t s = 1;  // output channels

  std::size_t reduction() const { return h * w * r; }
  std::size_t volume() const { return h * w * r * s; }
};

// tensor4d is indexed [s][r][h][w]. Output is S x K with column
// k = (ri * h + hi) * w + wi.
DenseMatrix reshape_conv_weight(std::span<const double> tensor4d, const ConvShape& shape);
std::vector<double> unreshape_conv_weight(const DenseMatrix& m, const ConvShape& shape);

struct Padding {
  std::size_t orig_rows = 0;
  std::size_t orig_cols = 0;
  std::size_t pad_rows = 0;
  std::size_t pad_cols = 0;
};

struct PaddedMatrix {
  DenseMatrix matrix;
  Padding padding;
};

PaddedMatrix pad_to_blocks(const DenseMatrix& m, std::size_t block);
DenseMatrix crop(const DenseMatrix& m, const Padding& padding);

// out[i][o] = sum_k a[i][k] * w[o][k], accumulated in ascending k.
// a is batch x K, w is S x K, result batch x S. Parallel over output rows;
// every element keeps the same accumulation order, so thread count does not
// change the result.
DenseMatrix matmul_dense(const DenseMatrix& a, const DenseMatrix& w);
// Single-threaded reference for matmul_dense.
DenseMatrix matmul_dense_serial(const DenseMatrix& a, const DenseMatrix& w);

DenseMatrix transpose(const DenseMatrix& m);
// Keeps w where mask is set, writes +0.0 elsewhere.
DenseMatrix apply_mask(const DenseMatrix& w, const PruneMask& mask);

}  // namespace crisp

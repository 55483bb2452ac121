// SPDX-License-Identifier: Apache-2.0
#include "crisp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace crisp {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw DimensionError("DenseMatrix: " + std::to_string(values_.size()) + " values for " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

bool DenseMatrix::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

PruneMask::PruneMask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

std::size_t PruneMask::count_kept() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

DenseMatrix reshape_conv_weight(std::span<const double> tensor4d, const ConvShape& shape) {
  if (shape.h == 0 || shape.w == 0 || shape.r == 0 || shape.s == 0) {
    throw DimensionError("reshape_conv_weight: conv dimensions must be >= 1");
  }
  if (tensor4d.size() != shape.volume()) {
    throw DimensionError("reshape_conv_weight: tensor has " + std::to_string(tensor4d.size()) +
                         " values, shape needs " + std::to_string(shape.volume()));
  }
  // [s][r][h][w] row-major is already S x (r,h,w) flattened.
  return DenseMatrix(shape.s, shape.reduction(),
                     std::vector<double>(tensor4d.begin(), tensor4d.end()));
}

std::vector<double> unreshape_conv_weight(const DenseMatrix& m, const ConvShape& shape) {
  if (m.rows() != shape.s || m.cols() != shape.reduction()) {
    throw DimensionError("unreshape_conv_weight: matrix shape does not match conv shape");
  }
  return {m.values().begin(), m.values().end()};
}

PaddedMatrix pad_to_blocks(const DenseMatrix& m, std::size_t block) {
  if (block == 0) throw ArgumentError("pad_to_blocks: block size must be >= 1");
  const std::size_t rows = (m.rows() + block - 1) / block * block;
  const std::size_t cols = (m.cols() + block - 1) / block * block;
  DenseMatrix out(rows, cols, 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::copy(m.row(r).begin(), m.row(r).end(), out.row(r).begin());
  }
  return {std::move(out), Padding{m.rows(), m.cols(), rows - m.rows(), cols - m.cols()}};
}

DenseMatrix crop(const DenseMatrix& m, const Padding& padding) {
  if (padding.orig_rows > m.rows() || padding.orig_cols > m.cols()) {
    throw DimensionError("crop: padding record larger than matrix");
  }
  DenseMatrix out(padding.orig_rows, padding.orig_cols);
  for (std::size_t r = 0; r < padding.orig_rows; ++r) {
    auto src = m.row(r);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(padding.orig_cols),
              out.row(r).begin());
  }
  return out;
}

namespace {

void check_inner(const DenseMatrix& a, const DenseMatrix& w) {
  if (a.cols() != w.cols()) {
    throw DimensionError("matmul_dense: activations have " + std::to_string(a.cols()) +
                         " columns, weights have " + std::to_string(w.cols()));
  }
}

inline double dot_ascending(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * y[k];
  return acc;
}

}  // namespace

DenseMatrix matmul_dense(const DenseMatrix& a, const DenseMatrix& w) {
  check_inner(a, w);
  DenseMatrix out(a.rows(), w.rows());
  const auto batch = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < batch; ++i) {
    auto x = a.row(static_cast<std::size_t>(i));
    auto dst = out.row(static_cast<std::size_t>(i));
    for (std::size_t o = 0; o < w.rows(); ++o) dst[o] = dot_ascending(x, w.row(o));
  }
  return out;
}

DenseMatrix matmul_dense_serial(const DenseMatrix& a, const DenseMatrix& w) {
  check_inner(a, w);
  DenseMatrix out(a.rows(), w.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t o = 0; o < w.rows(); ++o) out(i, o) = dot_ascending(a.row(i), w.row(o));
  }
  return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

DenseMatrix apply_mask(const DenseMatrix& w, const PruneMask& mask) {
  if (w.rows() != mask.rows() || w.cols() != mask.cols()) {
    throw DimensionError("apply_mask: mask shape differs from matrix shape");
  }
  DenseMatrix out(w.rows(), w.cols(), 0.0);
  auto src = w.values();
  auto bits = mask.bits();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i)
    if (bits[i]) dst[i] = src[i];
  return out;
}

}  // namespace crisp

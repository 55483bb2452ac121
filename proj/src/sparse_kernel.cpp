// SPDX-License-Identifier: Apache-2.0
#include "crisp/sparse_kernel.hpp"

#include <algorithm>
#include <limits>

namespace crisp {

namespace {

void check_shapes(const HybridSparseMatrix& w, const DenseMatrix& acts) {
  check_invariants(w);
  if (acts.cols() != w.cols) {
    throw DimensionError("spmm: activations have " + std::to_string(acts.cols()) +
                         " columns, weights have K=" + std::to_string(w.cols));
  }
}

// Stored values of output row o start at this position in w.values.
inline std::size_t row_base(const HybridSparseMatrix& w, std::size_t o) {
  const std::size_t b = w.block.b;
  const std::size_t per_block_row_elem = static_cast<std::size_t>(b / w.nm.m) * w.nm.n;
  const std::size_t br = o / b;
  const std::size_t r_in = o % b;
  // Each kept block of a block row holds b rows of per_block_row_elem values.
  return br * w.kept_cols_per_blockrow * b * per_block_row_elem + r_in * per_block_row_elem;
}

template <bool kCount>
inline double dot_row(const HybridSparseMatrix& w, std::size_t o, std::span<const double> x,
                      std::uint64_t* touched) {
  const std::size_t b = w.block.b;
  const std::size_t m = w.nm.m;
  const std::size_t n = w.nm.n;
  const std::size_t groups = b / m;
  const std::size_t per_row = groups * n;
  const std::size_t block_stride = b * per_row;  // values per kept block
  std::size_t pos = row_base(w, o);
  double acc = 0.0;
  for (auto bc : w.blocks_of_row(o / b)) {
    const double* tile = x.data() + static_cast<std::size_t>(bc) * b;  // block-index gather
    const double* val = w.values.data() + pos;
    const std::uint8_t* off = w.offsets.data() + pos;
    for (std::size_t g = 0; g < groups; ++g) {
      const double* group = tile + g * m;
      for (std::size_t t = 0; t < n; ++t) {
        acc += val[g * n + t] * group[off[g * n + t]];  // offset-based operand select
      }
    }
    if constexpr (kCount) *touched += per_row;
    pos += block_stride;
  }
  return acc;
}

}  // namespace

DenseMatrix spmm(const HybridSparseMatrix& w, const DenseMatrix& acts) {
  check_shapes(w, acts);
  DenseMatrix out(acts.rows(), w.rows);
  const auto total = static_cast<std::int64_t>(acts.rows()) * w.rows;
  const std::size_t s = w.rows;
#pragma omp parallel for schedule(static)
  for (std::int64_t idx = 0; idx < total; ++idx) {
    const std::size_t i = static_cast<std::size_t>(idx) / s;
    const std::size_t o = static_cast<std::size_t>(idx) % s;
    out(i, o) = dot_row<false>(w, o, acts.row(i), nullptr);
  }
  return out;
}

DenseMatrix spmm_serial(const HybridSparseMatrix& w, const DenseMatrix& acts,
                        SpmmCounters* counters) {
  check_shapes(w, acts);
  DenseMatrix out(acts.rows(), w.rows);
  std::uint64_t min_touch = std::numeric_limits<std::uint64_t>::max(), max_touch = 0, macs = 0;
  for (std::size_t i = 0; i < acts.rows(); ++i) {
    for (std::size_t o = 0; o < w.rows; ++o) {
      std::uint64_t touched = 0;
      out(i, o) = dot_row<true>(w, o, acts.row(i), &touched);
      macs += touched;
      min_touch = std::min(min_touch, touched);
      max_touch = std::max(max_touch, touched);
    }
  }
  if (counters) {
    counters->macs = macs;
    counters->min_weights_per_output = macs ? min_touch : 0;
    counters->max_weights_per_output = max_touch;
  }
  return out;
}

std::uint64_t effectual_mac_count(const HybridSparseMatrix& w, std::uint64_t batch) {
  return batch * w.rows * w.kept_cols() / w.nm.m * w.nm.n;
}

}  // namespace crisp

// SPDX-License-Identifier: Apache-2.0
//
// Sparse x dense product over a HybridSparseMatrix, following the
// accelerator dataflow: gather the activation columns of each kept block via
// its block index, pick the N operands of every group of M through the stored
// offsets, multiply-accumulate.
//
// Visitation order per output element is kept block (ascending) -> group ->
// offset, which is ascending k. Skipped positions hold exact zeros in the
// dense view, so the result is bit-identical to matmul_dense(acts, decode(w))
// for finite inputs.
#pragma once

#include <cstdint>

#include "crisp/hybrid_format.hpp"

namespace crisp {

struct SpmmCounters {
  std::uint64_t macs = 0;
  // Weight values read for each output element; min == max for valid input.
  std::uint64_t min_weights_per_output = 0;
  std::uint64_t max_weights_per_output = 0;
};

// acts is batch x K, result batch x S. OpenMP-parallel over (row, output).
DenseMatrix spmm(const HybridSparseMatrix& w, const DenseMatrix& acts);

// Single-threaded reference with the same visitation order; optionally counts
// the work it does.
DenseMatrix spmm_serial(const HybridSparseMatrix& w, const DenseMatrix& acts,
                        SpmmCounters* counters = nullptr);

// batch * S * K' * N / M.
std::uint64_t effectual_mac_count(const HybridSparseMatrix& w, std::uint64_t batch);

}  // namespace crisp

// SPDX-License-Identifier: Apache-2.0
//
// Class-aware iterative pruning into the hybrid N:M + block pattern.
//
// One iteration:
//   saliency      T = |(sum of u_c loss gradients / H) (.) W|
//   N:M step      keep the N most salient of every aligned group of M
//   block scores  s_j = sum of T over N:M survivors of block j
//   row sort      ascending per block row (rank o = o-th smallest block)
//   rank columns  c_o = sum over block rows of the rank-o scores
//   global rank   all layers' c_o ascending
//   selection     smallest c_o first until the global sparsity target holds
//   block prune   rank column o removes one block from every block row
//   fine-tune     STE training on u_c data
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "crisp/hybrid_format.hpp"
#include "crisp/micro_net.hpp"

namespace crisp {

struct SaliencyMap {
  DenseMatrix scores;  // non-negative, same shape as the weights
};

SaliencyMap class_saliency(const DenseMatrix& weights, const DenseMatrix& grad_accum,
                           std::size_t sample_count);

// Block-level keep flags for a (block_rows x block_cols) grid of b x b tiles.
struct BlockKeep {
  std::size_t block_rows = 0;
  std::size_t block_cols = 0;
  std::uint32_t b = 0;
  std::vector<std::uint8_t> keep;

  static BlockKeep all(std::size_t rows, std::size_t cols, std::uint32_t b);
  static BlockKeep from_mask(const PruneMask& mask, std::uint32_t b);
  bool operator()(std::size_t br, std::size_t bc) const { return keep[br * block_cols + bc] != 0; }
};

// Inside kept blocks, keeps the N highest-saliency positions of every aligned
// group of M (ties: lowest column). Pruned blocks come out all-zero.
PruneMask nm_project(const SaliencyMap& saliency, const NmConfig& nm, const BlockKeep& blocks);
// Same selection with every group eligible; only needs cols % m == 0.
inline PruneMask nm_project(const SaliencyMap& saliency, const NmConfig& nm) {
  return nm_project(saliency, nm, BlockKeep{});
}

struct BlockScoreGrid {
  std::size_t block_rows = 0;
  std::size_t block_cols = 0;
  std::uint32_t b = 0;
  std::vector<double> scores;       // row-major (block_rows x block_cols)
  std::vector<std::uint8_t> pruned; // block already removed by block pruning
  // Filled by row_sort: row_perms[br * block_cols + o] is the block column at
  // rank o of block row br.
  std::vector<std::uint32_t> row_perms;

  double score(std::size_t br, std::size_t bc) const { return scores[br * block_cols + bc]; }
  bool sorted() const { return row_perms.size() == scores.size(); }
  double ranked_score(std::size_t br, std::size_t o) const {
    return score(br, row_perms[br * block_cols + o]);
  }
};

// s_j over mask survivors; blocks without any mask bit are flagged pruned and
// score 0.
BlockScoreGrid block_scores(const SaliencyMap& saliency, const PruneMask& mask, std::uint32_t b);

// Ascending per row; pruned blocks first, then by score, then by block column.
BlockScoreGrid row_sort(BlockScoreGrid grid);

struct RankColumnScore {
  std::size_t layer = 0;
  std::size_t rank = 0;
  double score = 0.0;                 // c_o
  std::size_t weights_removed = 0;    // S_l * B
};

std::vector<RankColumnScore> column_aggregate(const BlockScoreGrid& grid, std::size_t layer);

// Ascending c_o; ties by (layer, rank).
std::vector<RankColumnScore> global_rank(const std::vector<std::vector<RankColumnScore>>& layers);

struct LayerStats {
  std::size_t rows = 0;          // S_l
  std::size_t cols = 0;          // K_l
  std::uint32_t b = 0;
  std::size_t pruned_ranks = 0;  // rank columns removed in earlier iterations

  std::size_t rank_columns() const { return cols / b; }
};

// 1 - sum_l (K'_l/K_l)(N/M)(w_l/W) with K'_l = K_l - counts[l]*B.
double global_sparsity(const std::vector<LayerStats>& stats, const std::vector<std::size_t>& counts,
                       const NmConfig& nm);

// Walks `ranked` from the smallest c_o, adding rank columns until the global
// sparsity reaches kappa_p. A layer never loses its last rank column and never
// gets back columns pruned earlier. Returns pruned-rank counts per layer.
std::vector<std::size_t> select_prune_set(const std::vector<RankColumnScore>& ranked,
                                          const std::vector<LayerStats>& stats, double kappa_p,
                                          const NmConfig& nm);

// Zeros the blocks at ranks [0, count) of every block row.
PruneMask apply_block_prune(const PruneMask& mask, const BlockScoreGrid& grid, std::size_t count);

struct PruneSchedule {
  NmConfig nm;
  double kappa_target = 0.9;
  double delta = 0.05;
  std::uint32_t iterations = 8;
  std::uint32_t fine_tune_epochs = 2;
  std::uint32_t saliency_epochs = 1;

  void validate() const;  // throws ArgumentError
  // Smallest iteration count whose last step reaches kappa_target.
  static std::uint32_t iterations_needed(const NmConfig& nm, double kappa_target, double delta);
};

// min(kappa_target, (1 - n/m) + p * delta), 1 <= p <= iterations.
double next_kappa(std::uint32_t p, const PruneSchedule& schedule);

struct PruneOptions {
  std::uint32_t block = 8;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 4e-5;
  std::uint32_t batch = 32;
  std::uint64_t seed = 1;
};

struct IterationReport {
  std::uint32_t iteration = 0;
  double kappa_p = 0.0;
  double measured_sparsity = 0.0;
  double loss = 0.0;    // mean u_c training loss after fine-tuning
  double acc_uc = 0.0;  // u_c test accuracy
  std::vector<double> layer_sparsity;   // prunable layers, in order
  std::vector<std::size_t> pruned_ranks;
  // Invariants checked while the iteration ran.
  bool rank_scores_monotone = true;  // c_o nondecreasing in o, every layer
  bool uniform_block_rows = true;    // masks pass validate_pattern
  bool block_prune_monotone = true;  // no earlier-pruned block came back
};

struct PruneResult {
  MicroModel model;
  std::vector<IterationReport> iterations;
};

// Sparsity over the prunable layers' masks (1 - kept / total).
double measured_sparsity(const MicroModel& model);
std::vector<double> layer_sparsities(const MicroModel& model);

PruneResult prune_model(MicroModel model, const SynthDataset& data, const PruneSchedule& schedule,
                        const UserProfile& profile, const PruneOptions& opts);

}  // namespace crisp

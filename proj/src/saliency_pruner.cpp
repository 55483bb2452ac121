// SPDX-License-Identifier: Apache-2.0
#include "crisp/saliency_pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace crisp {

namespace {
constexpr double kSparsityEps = 1e-12;

bool meets(double sparsity, double kappa) { return sparsity >= kappa - kSparsityEps; }
}  // namespace

SaliencyMap class_saliency(const DenseMatrix& weights, const DenseMatrix& grad_accum,
                           std::size_t sample_count) {
  if (sample_count == 0) throw ArgumentError("class_saliency: sample count H must be >= 1");
  if (weights.rows() != grad_accum.rows() || weights.cols() != grad_accum.cols()) {
    throw DimensionError("class_saliency: gradient shape differs from weight shape");
  }
  const double h = static_cast<double>(sample_count);
  SaliencyMap out{DenseMatrix(weights.rows(), weights.cols())};
  auto w = weights.values();
  auto g = grad_accum.values();
  auto s = out.scores.values();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs((g[i] / h) * w[i]);
  return out;
}

BlockKeep BlockKeep::all(std::size_t rows, std::size_t cols, std::uint32_t b) {
  if (b == 0 || rows % b != 0 || cols % b != 0) {
    throw DimensionError("BlockKeep: dimensions not divisible by block size");
  }
  BlockKeep k{rows / b, cols / b, b, {}};
  k.keep.assign(k.block_rows * k.block_cols, 1);
  return k;
}

BlockKeep BlockKeep::from_mask(const PruneMask& mask, std::uint32_t b) {
  BlockKeep k = all(mask.rows(), mask.cols(), b);
  for (std::size_t br = 0; br < k.block_rows; ++br) {
    for (std::size_t bc = 0; bc < k.block_cols; ++bc) {
      bool any = false;
      for (std::size_t r = br * b; r < (br + 1) * b && !any; ++r)
        for (std::size_t c = bc * b; c < (bc + 1) * b && !any; ++c) any = mask(r, c);
      k.keep[br * k.block_cols + bc] = any ? 1 : 0;
    }
  }
  return k;
}

PruneMask nm_project(const SaliencyMap& saliency, const NmConfig& nm, const BlockKeep& blocks) {
  nm.validate();
  const auto& s = saliency.scores;
  if (s.cols() % nm.m != 0) {
    throw DimensionError("nm_project: " + std::to_string(s.cols()) +
                         " columns not divisible by m=" + std::to_string(nm.m));
  }
  const bool blocked = blocks.b != 0;
  if (blocked) {
    validate_config(nm, BlockConfig{blocks.b});
    if (blocks.block_rows * blocks.b != s.rows() || blocks.block_cols * blocks.b != s.cols()) {
      throw DimensionError("nm_project: block grid does not cover the saliency map");
    }
  }
  PruneMask mask(s.rows(), s.cols(), false);
  std::vector<std::uint32_t> idx(nm.m);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    for (std::size_t c0 = 0; c0 < s.cols(); c0 += nm.m) {
      if (blocked && !blocks(r / blocks.b, c0 / blocks.b)) continue;
      std::iota(idx.begin(), idx.end(), 0u);
      std::partial_sort(idx.begin(), idx.begin() + nm.n, idx.end(),
                        [&](std::uint32_t a, std::uint32_t b) {
                          const double sa = s(r, c0 + a), sb = s(r, c0 + b);
                          return sa != sb ? sa > sb : a < b;
                        });
      for (std::uint32_t t = 0; t < nm.n; ++t) mask.set(r, c0 + idx[t], true);
    }
  }
  return mask;
}

BlockScoreGrid block_scores(const SaliencyMap& saliency, const PruneMask& mask, std::uint32_t b) {
  const auto& s = saliency.scores;
  if (mask.rows() != s.rows() || mask.cols() != s.cols()) {
    throw DimensionError("block_scores: mask shape differs from saliency shape");
  }
  if (b == 0 || s.rows() % b != 0 || s.cols() % b != 0) {
    throw DimensionError("block_scores: dimensions not divisible by block size " +
                         std::to_string(b));
  }
  BlockScoreGrid grid;
  grid.block_rows = s.rows() / b;
  grid.block_cols = s.cols() / b;
  grid.b = b;
  grid.scores.assign(grid.block_rows * grid.block_cols, 0.0);
  grid.pruned.assign(grid.scores.size(), 1);
  for (std::size_t br = 0; br < grid.block_rows; ++br) {
    for (std::size_t bc = 0; bc < grid.block_cols; ++bc) {
      double sum = 0.0;
      bool any = false;
      for (std::size_t r = br * b; r < (br + 1) * b; ++r) {
        for (std::size_t c = bc * b; c < (bc + 1) * b; ++c) {
          if (!mask(r, c)) continue;
          sum += s(r, c);
          any = true;
        }
      }
      grid.scores[br * grid.block_cols + bc] = sum;
      grid.pruned[br * grid.block_cols + bc] = any ? 0 : 1;
    }
  }
  return grid;
}

BlockScoreGrid row_sort(BlockScoreGrid grid) {
  grid.row_perms.resize(grid.scores.size());
  for (std::size_t br = 0; br < grid.block_rows; ++br) {
    auto first = grid.row_perms.begin() + static_cast<std::ptrdiff_t>(br * grid.block_cols);
    auto last = first + static_cast<std::ptrdiff_t>(grid.block_cols);
    std::iota(first, last, 0u);
    std::stable_sort(first, last, [&](std::uint32_t a, std::uint32_t b) {
      const std::size_t ia = br * grid.block_cols + a, ib = br * grid.block_cols + b;
      const bool pa = !grid.pruned.empty() && grid.pruned[ia];
      const bool pb = !grid.pruned.empty() && grid.pruned[ib];
      if (pa != pb) return pa;
      return grid.scores[ia] < grid.scores[ib];
    });
  }
  return grid;
}

std::vector<RankColumnScore> column_aggregate(const BlockScoreGrid& grid, std::size_t layer) {
  if (!grid.sorted()) throw ArgumentError("column_aggregate: grid must be row-sorted first");
  std::vector<RankColumnScore> out;
  out.reserve(grid.block_cols);
  for (std::size_t o = 0; o < grid.block_cols; ++o) {
    double c = 0.0;
    for (std::size_t br = 0; br < grid.block_rows; ++br) c += grid.ranked_score(br, o);
    out.push_back({layer, o, c, grid.block_rows * grid.b * grid.b});
  }
  return out;
}

std::vector<RankColumnScore> global_rank(const std::vector<std::vector<RankColumnScore>>& layers) {
  std::vector<RankColumnScore> all;
  for (const auto& l : layers) all.insert(all.end(), l.begin(), l.end());
  std::sort(all.begin(), all.end(), [](const RankColumnScore& a, const RankColumnScore& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.rank < b.rank;
  });
  return all;
}

double global_sparsity(const std::vector<LayerStats>& stats, const std::vector<std::size_t>& counts,
                       const NmConfig& nm) {
  if (counts.size() != stats.size()) throw ArgumentError("global_sparsity: one count per layer");
  double kept = 0.0, total = 0.0;
  for (std::size_t l = 0; l < stats.size(); ++l) {
    const auto& st = stats[l];
    const std::size_t removed = counts[l] * st.b;
    if (removed > st.cols) throw ArgumentError("global_sparsity: count exceeds rank columns");
    kept += static_cast<double>(st.rows) * static_cast<double>(st.cols - removed);
    total += static_cast<double>(st.rows) * static_cast<double>(st.cols);
  }
  if (total == 0.0) return 0.0;
  return 1.0 - (kept * nm.n) / (total * nm.m);
}

std::vector<std::size_t> select_prune_set(const std::vector<RankColumnScore>& ranked,
                                          const std::vector<LayerStats>& stats, double kappa_p,
                                          const NmConfig& nm) {
  nm.validate();
  std::vector<std::size_t> counts(stats.size());
  for (std::size_t l = 0; l < stats.size(); ++l) {
    if (stats[l].b == 0 || stats[l].cols % stats[l].b != 0 || stats[l].rank_columns() == 0) {
      throw ArgumentError("select_prune_set: layer " + std::to_string(l) + " has no rank columns");
    }
    if (stats[l].pruned_ranks >= stats[l].rank_columns()) {
      throw ArgumentError("select_prune_set: layer " + std::to_string(l) + " already collapsed");
    }
    counts[l] = stats[l].pruned_ranks;
  }
  if (meets(global_sparsity(stats, counts, nm), kappa_p)) return counts;

  std::vector<std::uint8_t> guarded(stats.size(), 0);
  for (const auto& entry : ranked) {
    if (entry.layer >= stats.size()) throw ArgumentError("select_prune_set: unknown layer id");
    const std::size_t l = entry.layer;
    if (entry.rank < counts[l]) continue;  // pruned in an earlier iteration
    if (entry.rank != counts[l]) {
      throw ArgumentError("select_prune_set: rank columns of layer " + std::to_string(l) +
                          " are not in ascending rank order");
    }
    if (entry.rank + 1 == stats[l].rank_columns()) {
      guarded[l] = 1;
      continue;
    }
    ++counts[l];
    if (meets(global_sparsity(stats, counts, nm), kappa_p)) return counts;
  }

  std::string binding;
  for (std::size_t l = 0; l < stats.size(); ++l) {
    if (!guarded[l]) continue;
    if (!binding.empty()) binding += ", ";
    binding += std::to_string(l);
  }
  throw ScheduleError("kappa_p=" + std::to_string(kappa_p) +
                      " unreachable: collapse guard holds the last rank column of layer(s) " +
                      (binding.empty() ? std::string("<none>") : binding) +
                      "; best sparsity " + std::to_string(global_sparsity(stats, counts, nm)));
}

PruneMask apply_block_prune(const PruneMask& mask, const BlockScoreGrid& grid, std::size_t count) {
  if (!grid.sorted()) throw ArgumentError("apply_block_prune: grid must be row-sorted");
  if (mask.rows() != grid.block_rows * grid.b || mask.cols() != grid.block_cols * grid.b) {
    throw DimensionError("apply_block_prune: mask does not match the block grid");
  }
  if (grid.block_cols > 0 && count > grid.block_cols - 1) {
    throw ArgumentError("apply_block_prune: count " + std::to_string(count) +
                        " would remove every block of a row");
  }
  PruneMask out = mask;
  const std::size_t b = grid.b;
  for (std::size_t br = 0; br < grid.block_rows; ++br) {
    for (std::size_t o = 0; o < count; ++o) {
      const std::size_t bc = grid.row_perms[br * grid.block_cols + o];
      for (std::size_t r = br * b; r < (br + 1) * b; ++r)
        for (std::size_t c = bc * b; c < (bc + 1) * b; ++c) out.set(r, c, false);
    }
  }
  return out;
}

void PruneSchedule::validate() const {
  nm.validate();
  const double base = 1.0 - nm.density();
  if (!(kappa_target < 1.0) || kappa_target < base - kSparsityEps) {
    throw ArgumentError("schedule: kappa_target must lie in [1 - n/m, 1), got " +
                        std::to_string(kappa_target));
  }
  if (!(delta > 0.0)) throw ArgumentError("schedule: delta must be > 0");
  if (iterations < 1) throw ArgumentError("schedule: iterations must be >= 1");
  if (saliency_epochs < 1) throw ArgumentError("schedule: saliency_epochs must be >= 1");
  if (base + iterations * delta < kappa_target - kSparsityEps) {
    throw ArgumentError("schedule: " + std::to_string(iterations) + " iterations of delta " +
                        std::to_string(delta) + " cannot reach kappa_target " +
                        std::to_string(kappa_target));
  }
}

std::uint32_t PruneSchedule::iterations_needed(const NmConfig& nm, double kappa_target,
                                               double delta) {
  const double base = 1.0 - nm.density();
  if (kappa_target <= base) return 1;
  return static_cast<std::uint32_t>(std::ceil((kappa_target - base) / delta - 1e-9));
}

double next_kappa(std::uint32_t p, const PruneSchedule& schedule) {
  if (p < 1 || p > schedule.iterations) {
    throw ArgumentError("next_kappa: iteration " + std::to_string(p) + " outside [1, " +
                        std::to_string(schedule.iterations) + "]");
  }
  const double base = 1.0 - schedule.nm.density();
  return std::min(schedule.kappa_target, base + p * schedule.delta);
}

double measured_sparsity(const MicroModel& model) {
  double kept = 0.0, total = 0.0;
  for (const auto& L : model.layers) {
    if (!L.prunable) continue;
    kept += static_cast<double>(L.mask.count_kept());
    total += static_cast<double>(L.mask.size());
  }
  return total == 0.0 ? 0.0 : 1.0 - kept / total;
}

std::vector<double> layer_sparsities(const MicroModel& model) {
  std::vector<double> out;
  for (const auto& L : model.layers) {
    if (!L.prunable) continue;
    out.push_back(1.0 - static_cast<double>(L.mask.count_kept()) /
                            static_cast<double>(L.mask.size()));
  }
  return out;
}

namespace {

// Fine-tunes on the saliency samples while summing every batch's per-sample
// gradients (class-aware saliency estimation).
ClassGradients saliency_finetune(MicroModel& model, const LabeledSet& samples,
                                 std::uint32_t epochs, const PruneOptions& opts,
                                 std::uint64_t seed) {
  ClassGradients acc{Gradients::zeros_like(model), 0};
  SgdOptimizer sgd(model, opts.lr, opts.momentum, opts.weight_decay);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(samples.y.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::uint32_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::size_t end = std::min(order.size(), start + opts.batch);
      DenseMatrix x(end - start, samples.x.cols());
      std::vector<std::uint32_t> y(end - start);
      for (std::size_t i = start; i < end; ++i) {
        auto src = samples.x.row(order[i]);
        std::copy(src.begin(), src.end(), x.row(i - start).begin());
        y[i - start] = samples.y[order[i]];
      }
      auto lg = loss_and_backward(model, x, y);
      acc.sum.add_scaled(lg.grads, static_cast<double>(y.size()));
      acc.samples += y.size();
      sgd.step(model, lg.grads);
    }
  }
  return acc;
}

bool rank_scores_monotone(const std::vector<RankColumnScore>& cols) {
  for (std::size_t o = 1; o < cols.size(); ++o)
    if (cols[o].score < cols[o - 1].score) return false;
  return true;
}

}  // namespace

PruneResult prune_model(MicroModel model, const SynthDataset& data, const PruneSchedule& schedule,
                        const UserProfile& profile, const PruneOptions& opts) {
  model.check();
  schedule.validate();
  profile.validate(data.classes);
  if (data.classes != model.class_count || data.dim != model.input_dim()) {
    throw DimensionError("prune_model: dataset does not match the model");
  }
  const BlockConfig block{opts.block};
  validate_config(schedule.nm, block);

  std::vector<std::size_t> prunable;
  std::vector<LayerStats> stats;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& L = model.layers[l];
    if (!L.prunable) continue;
    if (L.weights.rows() % block.b != 0 || L.weights.cols() % block.b != 0) {
      throw DimensionError("prune_model: layer " + std::to_string(l) + " shape " +
                           std::to_string(L.weights.rows()) + "x" +
                           std::to_string(L.weights.cols()) + " not divisible by block " +
                           std::to_string(block.b));
    }
    // Blocks already removed from an earlier run stay removed.
    const auto keep = BlockKeep::from_mask(L.mask, block.b);
    std::size_t pruned = 0;
    for (std::size_t bc = 0; bc < keep.block_cols; ++bc) pruned += keep(0, bc) ? 0 : 1;
    prunable.push_back(l);
    stats.push_back({L.weights.rows(), L.weights.cols(), block.b, pruned});
  }
  if (prunable.empty()) throw ArgumentError("prune_model: model has no prunable layers");

  const auto finetune_set = select_classes(data.train_x, data.train_y, profile.u_c);
  const auto saliency_set = saliency_samples(data, profile);

  PruneResult result;
  for (std::uint32_t p = 1; p <= schedule.iterations; ++p) {
    IterationReport rep;
    rep.iteration = p;
    rep.kappa_p = next_kappa(p, schedule);

    auto grads = saliency_finetune(model, saliency_set, schedule.saliency_epochs, opts,
                                   opts.seed * 7919 + p);

    std::vector<PruneMask> nm_masks;
    std::vector<BlockScoreGrid> grids;
    std::vector<std::vector<RankColumnScore>> columns;
    for (std::size_t i = 0; i < prunable.size(); ++i) {
      const auto& L = model.layers[prunable[i]];
      const auto sal = class_saliency(L.weights, grads.sum.weights[prunable[i]], grads.samples);
      nm_masks.push_back(nm_project(sal, schedule.nm, BlockKeep::from_mask(L.mask, block.b)));
      grids.push_back(row_sort(block_scores(sal, nm_masks.back(), block.b)));
      columns.push_back(column_aggregate(grids.back(), i));
      rep.rank_scores_monotone = rep.rank_scores_monotone && rank_scores_monotone(columns.back());
    }

    const auto counts = select_prune_set(global_rank(columns), stats, rep.kappa_p, schedule.nm);

    for (std::size_t i = 0; i < prunable.size(); ++i) {
      auto& L = model.layers[prunable[i]];
      const auto before = BlockKeep::from_mask(L.mask, block.b);
      L.mask = apply_block_prune(nm_masks[i], grids[i], counts[i]);
      const auto after = BlockKeep::from_mask(L.mask, block.b);
      for (std::size_t j = 0; j < before.keep.size(); ++j)
        if (!before.keep[j] && after.keep[j]) rep.block_prune_monotone = false;
      if (!validate_pattern(L.mask, schedule.nm, block).ok()) rep.uniform_block_rows = false;
      stats[i].pruned_ranks = counts[i];
    }

    if (schedule.fine_tune_epochs > 0) {
      TrainOptions ft{schedule.fine_tune_epochs, opts.lr, opts.momentum, opts.weight_decay,
                      opts.batch, opts.seed * 104729 + p};
      train(model, finetune_set.x, finetune_set.y, ft);
    }

    rep.loss = loss_only(model, finetune_set.x, finetune_set.y);
    rep.acc_uc = evaluate(model, data, profile.u_c);
    rep.measured_sparsity = measured_sparsity(model);
    rep.layer_sparsity = layer_sparsities(model);
    rep.pruned_ranks = counts;
    result.iterations.push_back(std::move(rep));
  }
  result.model = std::move(model);
  return result;
}

}  // namespace crisp

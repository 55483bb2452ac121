// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. One PASS/FAIL line per criterion; the exit
// status is non-zero when any criterion fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include <omp.h>

#include "fd_oracle.hpp"
#include "select_oracle.hpp"
#include "support.hpp"

#include "crisp/binary_io.hpp"
#include "crisp/error.hpp"
#include "crisp/perf_model.hpp"
#include "crisp/pipeline.hpp"
#include "crisp/sparse_kernel.hpp"

using namespace crisp;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* id, const char* title, const std::function<Outcome()>& fn) {
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %s %s: %s\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome ac1_format() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  const NmConfig nms[] = {{1, 4}, {2, 4}, {3, 4}};
  const std::uint32_t blocks[] = {4, 16, 32};
  int bad = 0;
  for (int it = 0; it < 1000; ++it) {
    const auto nm = nms[it % 3];
    const auto b = blocks[(it / 3) % 3];
    const std::size_t s = b * (1 + rng() % 3), k = b * (1 + rng() % 4);
    const auto mask = test::random_hybrid_mask(s, k, nm, b, rng() % (k / b + 1), rng, it % 2 == 0);
    const auto w = test::random_matrix(s, k, rng);
    const auto h = encode(w, mask, nm, {b});
    const auto back = deserialize(serialize(h));
    if (!test::bit_equal(decode(back), test::masked_copy(w, mask)) ||
        back.values.size() != s * h.kept_cols() / nm.m * nm.n) {
      ++bad;
    }
  }
  const double t = seconds_since(t0);
  return {bad == 0 && t < 10.0,
          fmt("1000 round trips (encode, serialize, decode), %d mismatches, %.2f s (limit 10 s)",
              bad, t)};
}

Outcome ac2_metadata() {
  std::mt19937_64 rng(2);
  int bad = 0;
  for (int it = 0; it < 1000; ++it) {
    const std::uint32_t m = 2u << (rng() % 3);
    const std::uint32_t n = 1 + rng() % m;
    const std::uint32_t b = m << (rng() % 4);
    const std::uint64_t s = 1 + rng() % 4096;
    const std::uint64_t kp = b * (rng() % 512);
    const auto got = metadata_bits_crisp(s, kp, {b}, {n, m});
    if (got.block_bits != test::ref_block_bits(s, kp, b) ||
        got.nm_bits != test::ref_nm_bits(s, kp, n, m)) {
      ++bad;
    }
  }
  const std::uint64_t S = 512, K = 4608, KP = K / 4;  // 75% of the blocks pruned
  const NmConfig nm{2, 4};
  const auto rows = unstructured_row_counts(S, K, static_cast<double>(KP) / K * nm.density(), 1);
  const auto rep = metadata_report(S, K, KP, {64}, nm, rows);
  const bool order = rep.crisp_total_bits < static_cast<double>(rep.csr_bits) &&
                     rep.csr_bits < rep.ellpack_bits;
  const bool ratios = rep.csr_ratio() >= 3.0 && rep.ellpack_ratio() >= 3.0 &&
                      rep.ellpack_bits >= rep.csr_bits;
  return {bad == 0 && order && ratios,
          fmt("1000 random tuples, %d mismatches; S=512 K=4608 b=64 2:4 K'=1152: crisp %.0f bits, "
              "csr %llu (%.2fx), ellpack %llu (%.2fx)",
              bad, rep.crisp_total_bits, static_cast<unsigned long long>(rep.csr_bits),
              rep.csr_ratio(), static_cast<unsigned long long>(rep.ellpack_bits),
              rep.ellpack_ratio())};
}

bool reports_ok(const PruneResult& res, const NmConfig& nm, std::uint32_t b) {
  bool ok = true;
  for (const auto& it : res.iterations)
    ok = ok && it.rank_scores_monotone && it.uniform_block_rows && it.block_prune_monotone;
  for (const auto& L : res.model.layers)
    if (L.prunable) ok = ok && validate_pattern(L.mask, nm, {b}).ok();
  return ok;
}

Outcome ac3_selection() {
  std::mt19937_64 rng(3);
  const NmConfig nms[] = {{1, 4}, {2, 4}, {3, 4}};
  int instances = 0, bad = 0;
  for (int it = 0; it < 4000; ++it) {
    const auto nm = nms[rng() % 3];
    const std::size_t n_layers = 1 + rng() % 2;
    std::vector<test::OracleLayer> layers;
    for (std::size_t l = 0; l < n_layers; ++l) {
      test::OracleLayer L;
      L.b = 4;
      const std::size_t ranks = 1 + rng() % (12 / n_layers);
      L.cols = ranks * L.b;
      L.rows = L.b * (1 + rng() % 4);
      L.floor = rng() % ranks;
      std::uniform_real_distribution<double> d(0.0, 5.0);
      L.scores.resize(ranks);
      for (auto& v : L.scores) v = it % 3 ? d(rng) : std::floor(d(rng));
      std::sort(L.scores.begin(), L.scores.end());
      layers.push_back(std::move(L));
    }
    std::vector<std::size_t> floors;
    for (const auto& L : layers) floors.push_back(L.floor);
    const double base = test::oracle_sparsity(layers, floors, nm);
    const double kappa = base + (1.0 - base) * std::uniform_real_distribution<double>(0, 1)(rng);
    const auto want = test::exhaustive_select(layers, kappa, nm);
    ++instances;
    try {
      const auto got = select_prune_set(test::to_rank_columns(layers), test::to_stats(layers),
                                        kappa, nm);
      if (!want || got != want->counts) ++bad;
    } catch (const ScheduleError&) {
      if (want) ++bad;
    }
  }
  // Invariants on every iteration of full pruning runs.
  int runs = 0, broken = 0;
  for (std::uint64_t seed : {1, 2}) {
    auto data = gen_synthetic(6, 64, 120, seed);
    const std::vector<std::size_t> hidden{64, 64};
    auto model = make_mlp(64, hidden, 6, seed + 1);
    TrainOptions t;
    t.epochs = 3;
    train(model, data.train_x, data.train_y, t);
    for (const NmConfig nm : {NmConfig{2, 4}, NmConfig{1, 4}}) {
      PruneSchedule s;
      s.nm = nm;
      s.kappa_target = 0.9;
      s.iterations = PruneSchedule::iterations_needed(nm, 0.9, 0.05);
      s.fine_tune_epochs = 1;
      PruneOptions o;
      o.block = 8;
      const auto res = prune_model(model, data, s, {{0, 3}, 16}, o);
      ++runs;
      if (!reports_ok(res, nm, o.block)) ++broken;
    }
  }
  return {bad == 0 && broken == 0,
          fmt("%d instances vs exhaustive search, %d mismatches; %d pruning runs, %d with broken "
              "per-iteration invariants",
              instances, bad, runs, broken)};
}

Outcome ac4_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto model = test::fd_model(seed, 10, {12, 8}, 5);
    std::mt19937_64 rng(seed + 100);
    const auto x = test::random_matrix(8, 10, rng, -2, 2);
    std::vector<std::uint32_t> y(8);
    for (auto& v : y) v = rng() % 5;
    const auto r = test::finite_difference_check(model, x, y, 1e-6, 1e-8);
    worst = std::max(worst, r.max_rel_error);
    params += r.params;
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-5 && t < 30.0,
          fmt("3 models, %zu parameters, max relative error %.2e (limit 1e-5), %.2f s", params,
              worst, t)};
}

Outcome ac5_spmm() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(5);
  const NmConfig nms[] = {{1, 4}, {2, 4}, {3, 4}};
  int int_bad = 0, real_bad = 0, real_not_bitexact = 0;
  double max_rel = 0.0;
  for (int it = 0; it < 1000; ++it) {
    const auto nm = nms[it % 3];
    const std::uint32_t b = it % 2 ? 16 : 4;
    const std::size_t s = b * (1 + rng() % 3), k = b * (1 + rng() % 4);
    const auto mask = test::random_hybrid_mask(s, k, nm, b, rng() % (k / b + 1), rng, it % 4 != 0);
    const bool ints = it % 2 == 0 ? (it / 2) % 2 == 0 : (it / 2) % 2 == 1;
    const auto w = ints ? test::random_int_matrix(s, k, rng) : test::random_matrix(s, k, rng);
    const std::size_t batch = 1 + rng() % 6;
    const auto x = ints ? test::random_int_matrix(batch, k, rng) : test::random_matrix(batch, k, rng);
    const auto h = encode(w, mask, nm, {b});
    const auto got = spmm(h, x);
    const auto want = matmul_dense_serial(x, decode(h));
    if (ints) {
      if (got != want) ++int_bad;
      continue;
    }
    double rel = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      const double e = want.values()[i], g = got.values()[i];
      const double denom = std::max(std::abs(e), std::numeric_limits<double>::min());
      rel = std::max(rel, std::abs(g - e) / denom);
    }
    max_rel = std::max(max_rel, rel);
    if (rel > 1e-12) ++real_bad;
    if (!test::bit_equal(got, want)) ++real_not_bitexact;
  }
  const double t = seconds_since(t0);
  return {int_bad == 0 && real_bad == 0 && t < 30.0,
          fmt("1000 cases, integer mismatches %d, real cases over 1e-12 %d (max rel %.2e, %d not "
              "bit-exact), %.2f s",
              int_bad, real_bad, max_rel, real_not_bitexact, t)};
}

Outcome ac6_personalization() {
  const auto t0 = Clock::now();
  int dense_ok = 0, retain_ok = 0, beats_block = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    const auto res = run_experiment(cfg);

    PruneSchedule block_only = cfg.schedule;
    block_only.nm = {4, 4};
    block_only.delta = cfg.schedule.kappa_target / cfg.schedule.iterations;
    PruneOptions po = cfg.prune;
    po.seed = cfg.seed + 4;
    const auto blk = prune_model(res.dense_finetuned, res.data, block_only, cfg.profile, po);
    const double blk_acc = evaluate(blk.model, res.data, cfg.profile.u_c);

    dense_ok += res.dense_acc_uc >= 0.95;
    retain_ok += res.pruned_acc_uc >= res.dense_acc_uc - 0.05;
    beats_block += res.pruned_acc_uc >= blk_acc;
    detail += fmt("seed %llu dense %.4f crisp %.4f (sparsity %.4f, loss %.4f) block-only %.4f "
                  "(sparsity %.4f, loss %.4f); ",
                  static_cast<unsigned long long>(seed), res.dense_acc_uc, res.pruned_acc_uc,
                  measured_sparsity(res.pruned.model), res.pruned.iterations.back().loss, blk_acc,
                  measured_sparsity(blk.model), blk.iterations.back().loss);
  }
  const double t = seconds_since(t0);
  detail += fmt("dense>=0.95 %d/3, within 5 points %d/3, crisp>=block-only %d/3, %.1f s (limit 300 s)",
                dense_ok, retain_ok, beats_block, t);
  return {dense_ok == 3 && retain_ok >= 2 && beats_block >= 2 && t < 300.0, detail};
}

Outcome ac7_perf() {
  const HwConfig hw;
  const auto layers = resnet50_like_layers();
  int order_bad = 0, mono_bad = 0, dense_bad = 0, energy_bad = 0;
  for (const auto& raw : layers) {
    for (std::uint32_t b : {16u, 32u, 64u}) {
      LayerShape l = raw;
      l.k = (raw.k + b - 1) / b * b;
      const auto dense = estimate(l, l.k, {4, 4}, {b}, hw);
      if (dense.speedup_vs_dense != 1.0) ++dense_bad;
      double prev_speed[3] = {0, 0, 0}, prev_energy[3] = {0, 0, 0};
      for (std::uint64_t kp = l.k;; kp -= b) {
        double speed[3];
        for (std::uint32_t n = 1; n <= 3; ++n) {
          const auto e = estimate(l, kp, {n, 4}, {b}, hw);
          speed[n - 1] = e.speedup_vs_dense;
          if (!(dense.energy_uj / e.energy_uj > 1.0)) ++energy_bad;
          if (kp != l.k && (e.speedup_vs_dense < prev_speed[n - 1] ||
                            e.energy_uj > prev_energy[n - 1])) {
            ++mono_bad;
          }
          prev_speed[n - 1] = e.speedup_vs_dense;
          prev_energy[n - 1] = e.energy_uj;
        }
        if (!(speed[0] >= speed[1] && speed[1] >= speed[2])) ++order_bad;
        if (kp == b) break;
      }
    }
  }
  double lo = 1e300, hi = 0.0;
  std::size_t band_rows = 0;
  for (const auto& r : sweep(layers, SweepGrid{}, hw)) {
    if (r.config != "crisp" || r.nm != NmConfig{1, 4}) continue;
    if (r.sparsity < 0.8 - 1e-12 || r.sparsity > 0.9 + 1e-12) continue;
    ++band_rows;
    lo = std::min(lo, r.est.speedup_vs_dense);
    hi = std::max(hi, r.est.speedup_vs_dense);
  }
  const bool band = band_rows > 0 && lo >= 4.0 && hi <= 20.0;
  return {order_bad == 0 && mono_bad == 0 && dense_bad == 0 && energy_bad == 0 && band,
          fmt("%zu layers x b{16,32,64}: ordering violations %d, monotonicity violations %d, "
              "dense!=1 %d, energy ratio<=1 %d; 1:4 speedup at 80-90%% sparsity in [%.2f, %.2f] "
              "over %zu rows (band [4, 20])",
              layers.size(), order_bad, mono_bad, dense_bad, energy_bad, lo, hi, band_rows)};
}

Outcome ac8_determinism(const fs::path& work) {
  omp_set_num_threads(1);
  fs::remove_all(work);
  ExperimentConfig cfg;
  cfg.seed = 11;
  const auto a = work / "a", b = work / "b";
  run_prune_to_dir(cfg, a);
  // Second run is driven by the first run's manifest.
  run_prune_to_dir(load_experiment_config(a / "prune.manifest.json"), b);
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    ++files;
    const auto other = b / entry.path().filename();
    if (!fs::exists(other) || io::read_file(entry.path().string()) != io::read_file(other.string()))
      ++differ;
  }
  const bool ok = files >= 9 && differ == 0;
  if (ok) fs::remove_all(work);
  return {ok, fmt("%zu files compared byte for byte, %zu differ", files, differ)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "crisp_acceptance";
  if (std::getenv("CRISP_SEED")) ::unsetenv("CRISP_SEED");
  report("AC1", "format fidelity", ac1_format);
  report("AC2", "metadata formulas", ac2_metadata);
  report("AC3", "rank-column selection oracle", ac3_selection);
  report("AC4", "gradient correctness", ac4_gradients);
  report("AC5", "spmm equivalence", ac5_spmm);
  report("AC6", "personalization trend", ac6_personalization);
  report("AC7", "perf-model trends", ac7_perf);
  report("AC8", "determinism", [&] { return ac8_determinism(work); });
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "crisp/error.hpp"
#include "crisp/perf_model.hpp"

using namespace crisp;

namespace {
HwConfig fast_memory() {
  HwConfig hw;
  hw.smem_bandwidth = 1e9;
  hw.dram_bandwidth = 1e9;
  return hw;
}
}  // namespace

TEST_CASE("dense run has speedup one") {
  const LayerShape l{"l", 64, 128, 512};
  const auto e = estimate(l, 512, {4, 4}, {16}, HwConfig{});
  CHECK(e.macs == 64ull * 128 * 512);
  CHECK(e.speedup_vs_dense == 1.0);
}

TEST_CASE("compute-bound 75% sparse layer") {
  const LayerShape l{"l", 16, 64, 64};
  const auto hw = fast_memory();
  const auto dense = estimate(l, 64, {4, 4}, {16}, hw);
  CHECK(dense.macs == 65536);
  CHECK(dense.compute_cycles == 256);
  CHECK(dense.total_cycles == 256);
  const auto sparse = estimate(l, 32, {2, 4}, {16}, hw);
  CHECK(overall_sparsity(64, 32, {2, 4}) == 0.75);
  CHECK(sparse.compute_cycles == 64);
  CHECK(sparse.total_cycles == 64);
  CHECK(sparse.speedup_vs_dense == 4.0);
}

TEST_CASE("memory-bound layer") {
  const LayerShape l{"gemv", 1, 1024, 4096};
  const auto e = estimate(l, 2048, {2, 4}, {16}, HwConfig{});
  CHECK_FALSE(e.fits_smem);
  CHECK(e.memory_cycles > e.compute_cycles);
  CHECK(e.total_cycles == e.memory_cycles);
}

TEST_CASE("speedup is the ratio of two estimates") {
  const LayerShape l{"l", 196, 256, 2304};
  const HwConfig hw;
  const auto s = estimate(l, 768, {1, 4}, {64}, hw);
  const auto d = estimate_raw(l, 2304, {4, 4}, {64}, hw);
  const auto raw = estimate_raw(l, 768, {1, 4}, {64}, hw);
  CHECK(s.speedup_vs_dense ==
        static_cast<double>(d.total_cycles) / static_cast<double>(raw.total_cycles));
}

TEST_CASE("monotone in kept columns and N") {
  const HwConfig hw;
  for (const auto& l : resnet50_like_layers()) {
    for (std::uint32_t b : {16u, 32u, 64u}) {
      const std::uint64_t k = (l.k + b - 1) / b * b;
      LayerShape padded = l;
      padded.k = k;
      const auto dense = estimate(padded, k, {4, 4}, {b}, hw);
      PerfEstimate prev[3];
      for (std::uint64_t kp = k; kp >= b; kp -= b) {
        const auto e1 = estimate(padded, kp, {1, 4}, {b}, hw);
        const auto e2 = estimate(padded, kp, {2, 4}, {b}, hw);
        const auto e3 = estimate(padded, kp, {3, 4}, {b}, hw);
        CHECK(e1.speedup_vs_dense >= e2.speedup_vs_dense);
        CHECK(e2.speedup_vs_dense >= e3.speedup_vs_dense);
        for (const auto* e : {&e1, &e2, &e3}) CHECK(e->energy_uj < dense.energy_uj);
        if (kp != k) {
          CHECK(e1.total_cycles <= prev[0].total_cycles);
          CHECK(e2.total_cycles <= prev[1].total_cycles);
          CHECK(e3.total_cycles <= prev[2].total_cycles);
          CHECK(e1.energy_uj <= prev[0].energy_uj);
          CHECK(e3.energy_uj <= prev[2].energy_uj);
        }
        prev[0] = e1;
        prev[1] = e2;
        prev[2] = e3;
        if (kp == b) break;
      }
    }
  }
}

TEST_CASE("larger blocks need fewer metadata bytes") {
  const LayerShape l{"l", 49, 512, 4608};
  for (std::uint64_t kp : {576ull, 1152ull, 2304ull}) {
    const auto b16 = estimate(l, kp, {2, 4}, {16}, HwConfig{});
    const auto b64 = estimate(l, kp, {2, 4}, {64}, HwConfig{});
    CHECK(b64.metadata_bytes <= b16.metadata_bytes);
  }
}

TEST_CASE("kprime_for_sparsity") {
  CHECK(kprime_for_sparsity(256, 0.75, {2, 4}, {16}) == 128);
  CHECK(kprime_for_sparsity(256, 0.8, {2, 4}, {16}) == 96);
  CHECK(kprime_for_sparsity(256, 0.99, {2, 4}, {16}) == 16);
  CHECK(kprime_for_sparsity(147, 0.0, {4, 4}, {16}) == 160);
  for (double t : {0.8, 0.85, 0.9})
    for (std::uint32_t n : {1u, 2u, 3u}) {
      const auto kp = kprime_for_sparsity(4608, t, {n, 4}, {64});
      CHECK(overall_sparsity(4608, kp, {n, 4}) >= t - 1e-12);
    }
}

TEST_CASE("sweep rows and CSV") {
  const std::vector<LayerShape> layers{{"a", 196, 256, 2304}, {"b", 1, 1000, 2048}};
  const auto rows = sweep(layers, SweepGrid{}, HwConfig{});
  CHECK(rows.size() == 2 * 3 * (2 + 9));
  std::size_t dense = 0;
  for (const auto& r : rows) {
    if (r.config == "dense") {
      ++dense;
      CHECK(r.est.speedup_vs_dense == 1.0);
      CHECK(r.energy_ratio_vs_dense == 1.0);
    } else {
      CHECK(r.energy_ratio_vs_dense > 1.0);
      CHECK(r.est.speedup_vs_dense >= 1.0);
    }
  }
  CHECK(dense == 6);
  const auto header = sweep_csv_header();
  const auto line = sweep_csv_row(rows[2]);
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(line.begin(), line.end(), ','));
  CHECK(line.rfind("a,crisp,1:4,16,", 0) == 0);
}

TEST_CASE("hardware config validation") {
  HwConfig hw;
  CHECK_NOTHROW(hw.validate());
  hw.dram_bandwidth = 2 * hw.smem_bandwidth;
  CHECK_THROWS_AS(hw.validate(), ArgumentError);
  hw = HwConfig{};
  hw.mac_lanes = 0;
  CHECK_THROWS_AS(hw.validate(), ArgumentError);
  CHECK_THROWS_AS(estimate({"x", 1, 16, 64}, 40, {2, 4}, {16}, HwConfig{}), ArgumentError);
}

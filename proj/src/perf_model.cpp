// SPDX-License-Identifier: Apache-2.0
#include "crisp/perf_model.hpp"

#include <cmath>
#include <cstdio>

namespace crisp {

void HwConfig::validate() const {
  if (mac_lanes == 0 || smem_bytes == 0 || element_bytes == 0) {
    throw ArgumentError("hw config: mac_lanes, smem_bytes, element_bytes must be positive");
  }
  if (!(smem_bandwidth > 0.0) || !(dram_bandwidth > 0.0)) {
    throw ArgumentError("hw config: bandwidths must be positive");
  }
  if (!(energy_per_mac > 0.0) || !(energy_per_smem_byte > 0.0) || !(energy_per_dram_byte > 0.0)) {
    throw ArgumentError("hw config: energy constants must be positive");
  }
  // Staying on chip must never be the slower or costlier path.
  if (smem_bandwidth < dram_bandwidth || energy_per_smem_byte > energy_per_dram_byte) {
    throw ArgumentError("hw config: SMEM must be at least as fast and cheap as DRAM");
  }
}

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

std::uint64_t ceil_div(double a, double b) { return static_cast<std::uint64_t>(std::ceil(a / b)); }

}  // namespace

PerfEstimate estimate_raw(const LayerShape& layer, std::uint64_t k_prime, const NmConfig& nm,
                          const BlockConfig& block, const HwConfig& hw) {
  hw.validate();
  validate_config(nm, block);
  if (layer.batch == 0 || layer.s == 0 || layer.k == 0) {
    throw ArgumentError("estimate: layer dimensions must be >= 1");
  }
  if (k_prime % block.b != 0 || k_prime > ceil_div(layer.k, block.b) * block.b) {
    throw ArgumentError("estimate: K'=" + std::to_string(k_prime) +
                        " must be a multiple of b no larger than padded K");
  }
  const std::uint64_t eb = hw.element_bytes;
  const std::uint64_t kept_per_row = k_prime / nm.m * nm.n;  // stored values per output row

  PerfEstimate e;
  e.macs = layer.batch * layer.s * kept_per_row;
  e.compute_cycles = ceil_div(e.macs, static_cast<std::uint64_t>(hw.mac_lanes));

  auto bits = metadata_bits_crisp(layer.s, k_prime, block, nm);
  // Dense groups (n == m) need no operand selection.
  if (nm.n == nm.m) bits.nm_bits = 0.0;
  e.metadata_bytes = static_cast<std::uint64_t>(std::ceil(bits.total() / 8.0));
  e.weight_bytes = layer.s * kept_per_row * eb + e.metadata_bytes;
  e.activation_bytes = layer.batch * k_prime * eb;
  e.output_bytes = layer.batch * layer.s * eb;
  e.traffic_bytes = e.weight_bytes + e.activation_bytes + e.output_bytes;

  e.fits_smem = e.traffic_bytes <= hw.smem_bytes;
  const double bw = e.fits_smem ? hw.smem_bandwidth : hw.dram_bandwidth;
  const double e_byte = e.fits_smem ? hw.energy_per_smem_byte : hw.energy_per_dram_byte;
  e.memory_cycles = ceil_div(static_cast<double>(e.traffic_bytes), bw);
  e.total_cycles = std::max(e.compute_cycles, e.memory_cycles);
  e.energy_uj = (static_cast<double>(e.macs) * hw.energy_per_mac +
                 static_cast<double>(e.traffic_bytes) * e_byte) * 1e-6;
  return e;
}

PerfEstimate estimate(const LayerShape& layer, std::uint64_t k_prime, const NmConfig& nm,
                      const BlockConfig& block, const HwConfig& hw) {
  auto e = estimate_raw(layer, k_prime, nm, block, hw);
  const std::uint64_t k_full = ceil_div(layer.k, block.b) * block.b;
  const auto dense = estimate_raw(layer, k_full, NmConfig{nm.m, nm.m}, block, hw);
  e.speedup_vs_dense =
      static_cast<double>(dense.total_cycles) / static_cast<double>(e.total_cycles);
  return e;
}

std::uint64_t kprime_for_sparsity(std::uint64_t k, double target, const NmConfig& nm,
                                  const BlockConfig& block) {
  nm.validate();
  const std::uint64_t k_full = ceil_div(k, block.b) * block.b;
  const double limit = static_cast<double>(k_full) * (1.0 - target) / nm.density();
  auto kp = static_cast<std::uint64_t>(std::floor(limit / block.b + 1e-9)) * block.b;
  kp = std::max<std::uint64_t>(kp, block.b);
  return std::min(kp, k_full);
}

std::vector<SweepRow> sweep(const std::vector<LayerShape>& layers, const SweepGrid& grid,
                            const HwConfig& hw) {
  hw.validate();
  std::vector<SweepRow> rows;
  for (const auto& raw : layers) {
    for (auto b : grid.blocks) {
      LayerShape layer = raw;
      layer.k = ceil_div(raw.k, b) * b;
      const BlockConfig block{b};
      const NmConfig dense_nm{4, 4};
      const auto dense = estimate(layer, layer.k, dense_nm, block, hw);
      auto push = [&](std::string config, const NmConfig& nm, double target, std::uint64_t kp) {
        SweepRow row;
        row.layer = layer.name;
        row.config = std::move(config);
        row.nm = nm;
        row.block = b;
        row.target_sparsity = target;
        row.k_prime = kp;
        row.sparsity = overall_sparsity(layer.k, kp, nm);
        row.est = estimate(layer, kp, nm, block, hw);
        row.energy_ratio_vs_dense = dense.energy_uj / row.est.energy_uj;
        rows.push_back(std::move(row));
      };
      push("dense", dense_nm, 0.0, layer.k);
      push("stc-2:4", NmConfig{2, 4}, 0.5, layer.k);
      for (const auto& nm : grid.nms) {
        validate_config(nm, block);
        for (double target : grid.sparsities) {
          push("crisp", nm, target, kprime_for_sparsity(layer.k, target, nm, block));
        }
      }
    }
  }
  return rows;
}

std::string sweep_csv_header() {
  return "layer,config,nm,block,target_sparsity,kprime,sparsity,macs,compute_cycles,"
         "memory_cycles,total_cycles,traffic_bytes,fits_smem,energy_uj,speedup_vs_dense,"
         "energy_ratio_vs_dense";
}

std::string sweep_csv_row(const SweepRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%s,%s,%s,%u,%.4f,%llu,%.6f,%llu,%llu,%llu,%llu,%llu,%d,%.6f,%.6f,%.6f",
                r.layer.c_str(), r.config.c_str(), r.nm.to_string().c_str(), r.block,
                r.target_sparsity, static_cast<unsigned long long>(r.k_prime), r.sparsity,
                static_cast<unsigned long long>(r.est.macs),
                static_cast<unsigned long long>(r.est.compute_cycles),
                static_cast<unsigned long long>(r.est.memory_cycles),
                static_cast<unsigned long long>(r.est.total_cycles),
                static_cast<unsigned long long>(r.est.traffic_bytes), r.est.fits_smem ? 1 : 0,
                r.est.energy_uj, r.est.speedup_vs_dense, r.energy_ratio_vs_dense);
  return buf;
}

std::vector<LayerShape> resnet50_like_layers() {
  return {
      {"conv1", 112 * 112, 64, 7 * 7 * 3},
      {"conv2_1x1a", 56 * 56, 64, 256},
      {"conv2_3x3", 56 * 56, 64, 3 * 3 * 64},
      {"conv2_1x1b", 56 * 56, 256, 64},
      {"conv3_1x1a", 28 * 28, 128, 512},
      {"conv3_3x3", 28 * 28, 128, 3 * 3 * 128},
      {"conv3_1x1b", 28 * 28, 512, 128},
      {"conv4_1x1a", 14 * 14, 256, 1024},
      {"conv4_3x3", 14 * 14, 256, 3 * 3 * 256},
      {"conv4_1x1b", 14 * 14, 1024, 256},
      {"conv5_1x1a", 7 * 7, 512, 2048},
      {"conv5_3x3", 7 * 7, 512, 3 * 3 * 512},
      {"conv5_1x1b", 7 * 7, 2048, 512},
      {"fc", 1, 1000, 2048},
  };
}

}  // namespace crisp

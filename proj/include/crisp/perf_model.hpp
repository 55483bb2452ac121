// SPDX-License-Identifier: Apache-2.0
//
// Roofline-style latency/energy model of an edge sparse tensor accelerator
// (SMEM -> register file -> MAC lanes) running the hybrid format.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crisp/hybrid_format.hpp"

namespace crisp {

struct HwConfig {
  std::uint32_t mac_lanes = 256;            // 4 tensor cores x 64 MACs
  std::uint64_t smem_bytes = 256 * 1024;
  double smem_bandwidth = 64.0;             // bytes/cycle, 1/4 of a 256 B/cycle port
  double dram_bandwidth = 64.0;             // bytes/cycle
  double energy_per_mac = 1.0;              // pJ
  double energy_per_smem_byte = 2.0;        // pJ
  double energy_per_dram_byte = 50.0;       // pJ
  std::uint32_t element_bytes = 2;          // weight/activation width

  void validate() const;  // throws ArgumentError
};

struct LayerShape {
  std::string name;
  std::uint64_t batch = 1;  // GEMM rows (e.g. output pixels)
  std::uint64_t s = 1;      // output channels
  std::uint64_t k = 1;      // reduction length
};

struct PerfEstimate {
  std::uint64_t macs = 0;
  std::uint64_t compute_cycles = 0;
  std::uint64_t memory_cycles = 0;
  std::uint64_t total_cycles = 0;
  std::uint64_t traffic_bytes = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t metadata_bytes = 0;
  std::uint64_t activation_bytes = 0;
  std::uint64_t output_bytes = 0;
  bool fits_smem = false;
  double energy_uj = 0.0;
  double speedup_vs_dense = 1.0;
};

// Cost of one layer stored with K' kept columns per block row. MACs are the
// effectual ones; traffic is stored values + metadata + activations of kept
// block columns + outputs, served from SMEM when the whole working set fits
// and from DRAM otherwise. Speedup is against the dense (K' = K, N = M) run
// of the same layer.
PerfEstimate estimate(const LayerShape& layer, std::uint64_t k_prime, const NmConfig& nm,
                      const BlockConfig& block, const HwConfig& hw);

// Same without the dense comparison (speedup_vs_dense left at 1).
PerfEstimate estimate_raw(const LayerShape& layer, std::uint64_t k_prime, const NmConfig& nm,
                          const BlockConfig& block, const HwConfig& hw);

// Largest multiple of b (at least b, at most K rounded up to b) whose overall
// sparsity is >= target.
std::uint64_t kprime_for_sparsity(std::uint64_t k, double target, const NmConfig& nm,
                                  const BlockConfig& block);

struct SweepRow {
  std::string layer;
  std::string config;  // "crisp", "dense", "stc-2:4"
  NmConfig nm;
  std::uint32_t block = 0;
  double target_sparsity = 0.0;
  std::uint64_t k_prime = 0;
  double sparsity = 0.0;
  PerfEstimate est;
  double energy_ratio_vs_dense = 1.0;
};

struct SweepGrid {
  std::vector<NmConfig> nms{{1, 4}, {2, 4}, {3, 4}};
  std::vector<std::uint32_t> blocks{16, 32, 64};
  std::vector<double> sparsities{0.8, 0.85, 0.9};
};

// For every layer: one dense row, one 2:4-without-block-skipping row (Sparse
// Tensor Core style), then the nm x block x sparsity grid. Layers whose K is
// not a multiple of b are padded up to it.
std::vector<SweepRow> sweep(const std::vector<LayerShape>& layers, const SweepGrid& grid,
                            const HwConfig& hw);

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);

// Convolution layers of a ResNet-50 style network at 224x224, lowered to GEMM
// (batch = output pixels, K = kh*kw*cin), plus the classifier.
std::vector<LayerShape> resnet50_like_layers();

}  // namespace crisp

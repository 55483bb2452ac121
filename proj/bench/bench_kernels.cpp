// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels: dense GEMM and hybrid-sparse SpMM.
#include <random>

#include <benchmark/benchmark.h>

#include "crisp/hybrid_format.hpp"
#include "crisp/sparse_kernel.hpp"
#include "crisp/tensor.hpp"

namespace {

using namespace crisp;

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  DenseMatrix m(r, c);
  for (auto& v : m.values()) v = d(rng);
  return m;
}

// Keeps the first `keep` block columns of every block row and the first n of
// every m-group inside them.
HybridSparseMatrix make_sparse(std::size_t s, std::size_t k, std::size_t keep, NmConfig nm,
                               std::uint32_t b) {
  const auto w = random_matrix(s, k, 7);
  PruneMask mask(s, k, false);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < keep * b; ++c) mask.set(r, c, c % nm.m < nm.n);
  }
  return encode(w, mask, nm, BlockConfig{b});
}

constexpr std::size_t kBatch = 64, kS = 256, kK = 1024;

void BM_DenseSerial(benchmark::State& st) {
  const auto a = random_matrix(kBatch, kK, 1), w = random_matrix(kS, kK, 2);
  for (auto _ : st) benchmark::DoNotOptimize(matmul_dense_serial(a, w));
  st.SetItemsProcessed(st.iterations() * kBatch * kS * kK);
}

void BM_DenseOmp(benchmark::State& st) {
  const auto a = random_matrix(kBatch, kK, 1), w = random_matrix(kS, kK, 2);
  for (auto _ : st) benchmark::DoNotOptimize(matmul_dense(a, w));
  st.SetItemsProcessed(st.iterations() * kBatch * kS * kK);
}

void BM_SpmmSerial(benchmark::State& st) {
  const auto h = make_sparse(kS, kK, static_cast<std::size_t>(st.range(0)), {2, 4}, 16);
  const auto a = random_matrix(kBatch, kK, 3);
  for (auto _ : st) benchmark::DoNotOptimize(spmm_serial(h, a));
  st.SetItemsProcessed(st.iterations() * effectual_mac_count(h, kBatch));
}

void BM_SpmmOmp(benchmark::State& st) {
  const auto h = make_sparse(kS, kK, static_cast<std::size_t>(st.range(0)), {2, 4}, 16);
  const auto a = random_matrix(kBatch, kK, 3);
  for (auto _ : st) benchmark::DoNotOptimize(spmm(h, a));
  st.SetItemsProcessed(st.iterations() * effectual_mac_count(h, kBatch));
}

}  // namespace

BENCHMARK(BM_DenseSerial);
BENCHMARK(BM_DenseOmp);
BENCHMARK(BM_SpmmSerial)->Arg(8)->Arg(32)->Arg(64);
BENCHMARK(BM_SpmmOmp)->Arg(8)->Arg(32)->Arg(64);

BENCHMARK_MAIN();

// SPDX-License-Identifier: Apache-2.0
//
// Hybrid structured sparsity: whole BxB blocks are pruned with the same
// number of surviving blocks in every block row, and inside surviving blocks
// every aligned group of M consecutive row elements keeps at most N values.
//
// Storage (HybridSparseMatrix):
//   block_col_indices  per block row, ascending kept block columns
//                      (Blocked-Ellpack, block-row-major)
//   offsets            N intra-group positions per group, ascending
//   values             N per group, ordered block row -> kept block ->
//                      element row within block -> group
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crisp/tensor.hpp"

namespace crisp {

struct NmConfig {
  std::uint32_t n = 2;
  std::uint32_t m = 4;

  double density() const { return static_cast<double>(n) / static_cast<double>(m); }
  void validate() const;  // throws ArgumentError
  std::string to_string() const;
  static NmConfig parse(const std::string& text);  // "2:4"

  friend bool operator==(const NmConfig&, const NmConfig&) = default;
};

struct BlockConfig {
  std::uint32_t b = 16;

  friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

// Throws ArgumentError unless b >= m and m divides b.
void validate_config(const NmConfig& nm, const BlockConfig& block);

struct PatternViolation {
  enum class Kind { UnevenBlockRow, GroupOverflow };
  Kind kind;
  // UnevenBlockRow: (block_row, kept block count, expected count).
  // GroupOverflow: (element row, group index along the row, kept count, n).
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t count = 0;
  std::size_t limit = 0;

  std::string to_string() const;
};

struct ValidationReport {
  std::vector<PatternViolation> violations;

  bool ok() const { return violations.empty(); }
  std::string summary(std::size_t max_items = 8) const;
};

// A block counts as kept when any of its mask bits is set.
ValidationReport validate_pattern(const PruneMask& mask, const NmConfig& nm,
                                  const BlockConfig& block);

class PatternError : public Error {
 public:
  explicit PatternError(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

struct HybridSparseMatrix {
  std::uint32_t rows = 0;  // S, multiple of b
  std::uint32_t cols = 0;  // K, multiple of b
  NmConfig nm;
  BlockConfig block;
  std::uint32_t kept_cols_per_blockrow = 0;       // K'/B
  std::vector<std::uint32_t> block_col_indices;   // (S/B) * kept entries
  std::vector<std::uint8_t> offsets;              // S * K' * N / M entries
  std::vector<double> values;                     // same length as offsets

  std::size_t block_rows() const { return block.b ? rows / block.b : 0; }
  std::size_t block_cols() const { return block.b ? cols / block.b : 0; }
  std::size_t kept_cols() const {
    return static_cast<std::size_t>(kept_cols_per_blockrow) * block.b;
  }  // K'
  std::size_t expected_value_count() const;

  std::span<const std::uint32_t> blocks_of_row(std::size_t block_row) const {
    return {block_col_indices.data() + block_row * kept_cols_per_blockrow,
            kept_cols_per_blockrow};
  }

  friend bool operator==(const HybridSparseMatrix&, const HybridSparseMatrix&) = default;
};

// Throws CorruptionError naming the first broken invariant.
void check_invariants(const HybridSparseMatrix& h);

// Groups holding fewer than N kept positions are completed with the smallest
// unused offsets, whose stored values are zero.
HybridSparseMatrix encode(const DenseMatrix& w, const PruneMask& mask, const NmConfig& nm,
                          const BlockConfig& block);
DenseMatrix decode(const HybridSparseMatrix& h);
// Mask of stored positions (including zero-padded offsets).
PruneMask stored_mask(const HybridSparseMatrix& h);

// ---- metadata accounting (bits) ----

struct CrispMetadataBits {
  double block_bits = 0.0;  // S*K'*floor(log2(K'/B)) / (B*B)
  double nm_bits = 0.0;     // S*K'*(N/M)*floor(log2(M))
  double total() const { return block_bits + nm_bits; }
};

CrispMetadataBits metadata_bits_crisp(std::uint64_t s, std::uint64_t k_prime,
                                      const BlockConfig& block, const NmConfig& nm);
// Block-index bits when each index is wide enough to address all K/B block
// columns: ceil(S/B) * (K'/B) * ceil(log2(K/B)).
double metadata_block_bits_addressable(std::uint64_t s, std::uint64_t k, std::uint64_t k_prime,
                                       const BlockConfig& block);
// nnz * w(K) + (S+1) * w(nnz+1), w(x) = max(1, ceil(log2 x)).
std::uint64_t metadata_bits_csr(std::uint64_t s, std::uint64_t k, std::uint64_t nnz);
// S * max_nnz_per_row * w(K).
std::uint64_t metadata_bits_ellpack(std::uint64_t s, std::uint64_t k,
                                    std::uint64_t max_nnz_per_row);
// 1 - (K'/K)(N/M).
double overall_sparsity(std::uint64_t k, std::uint64_t k_prime, const NmConfig& nm);

std::uint32_t floor_log2(std::uint64_t x);  // x >= 1
std::uint32_t ceil_log2(std::uint64_t x);   // x >= 1
std::uint32_t index_width(std::uint64_t x); // max(1, ceil_log2(x)), x = 0 -> 1

struct MetadataReport {
  std::uint64_t s = 0;
  std::uint64_t k = 0;
  std::uint64_t k_prime = 0;
  double crisp_block_bits = 0.0;
  double crisp_nm_bits = 0.0;
  double crisp_total_bits = 0.0;
  double crisp_block_bits_addressable = 0.0;
  std::uint64_t unstructured_nnz = 0;
  std::uint64_t unstructured_max_row_nnz = 0;
  std::uint64_t csr_bits = 0;
  std::uint64_t ellpack_bits = 0;
  double overall_sparsity = 0.0;

  double csr_ratio() const { return csr_bits / crisp_total_bits; }
  double ellpack_ratio() const { return ellpack_bits / crisp_total_bits; }
};

// Row nonzero counts of an unstructured mask at the given density, drawn with
// independent Bernoulli trials. Deterministic for a given seed.
std::vector<std::uint64_t> unstructured_row_counts(std::uint64_t s, std::uint64_t k,
                                                   double density, std::uint64_t seed);

// CRISP metadata versus CSR/ELLPACK storage of an unstructured matrix with the
// given per-row nonzero counts (the same nonzero budget spread irregularly).
MetadataReport metadata_report(std::uint64_t s, std::uint64_t k, std::uint64_t k_prime,
                               const BlockConfig& block, const NmConfig& nm,
                               std::span<const std::uint64_t> unstructured_rows);

// ---- .crsp binary format ----

std::vector<std::uint8_t> serialize(const HybridSparseMatrix& h);
HybridSparseMatrix deserialize(std::span<const std::uint8_t> bytes);

void write_crsp(const std::string& path, const HybridSparseMatrix& h);
HybridSparseMatrix read_crsp(const std::string& path);

}  // namespace crisp

// SPDX-License-Identifier: Apache-2.0
#include "crisp/hybrid_format.hpp"

#include <algorithm>
#include <bit>
#include <random>
#include <sstream>

namespace crisp {

void NmConfig::validate() const {
  if (m < 2) throw ArgumentError("N:M config: m must be >= 2, got " + std::to_string(m));
  if (n < 1 || n > m) throw ArgumentError("N:M config: need 1 <= n <= m, got " + to_string());
}

std::string NmConfig::to_string() const { return std::to_string(n) + ":" + std::to_string(m); }

NmConfig NmConfig::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ArgumentError("N:M config: expected \"n:m\", got " + text);
  NmConfig nm;
  try {
    std::size_t used = 0;
    nm.n = static_cast<std::uint32_t>(std::stoul(text.substr(0, colon), &used));
    if (used != colon) throw std::invalid_argument("n");
    const auto tail = text.substr(colon + 1);
    nm.m = static_cast<std::uint32_t>(std::stoul(tail, &used));
    if (used != tail.size()) throw std::invalid_argument("m");
  } catch (const std::logic_error&) {
    throw ArgumentError("N:M config: expected \"n:m\", got " + text);
  }
  nm.validate();
  return nm;
}

void validate_config(const NmConfig& nm, const BlockConfig& block) {
  nm.validate();
  if (block.b < nm.m || block.b % nm.m != 0) {
    throw ArgumentError("block size " + std::to_string(block.b) + " must be a multiple of m=" +
                        std::to_string(nm.m));
  }
}

std::string PatternViolation::to_string() const {
  std::ostringstream os;
  if (kind == Kind::UnevenBlockRow) {
    os << "block row " << row << " keeps " << count << " blocks, expected " << limit;
  } else {
    os << "row " << row << " group " << col << " keeps " << count << " > n=" << limit;
  }
  return os.str();
}

std::string ValidationReport::summary(std::size_t max_items) const {
  if (ok()) return "pattern ok";
  std::ostringstream os;
  os << violations.size() << " pattern violation(s): ";
  for (std::size_t i = 0; i < violations.size() && i < max_items; ++i) {
    if (i) os << "; ";
    os << violations[i].to_string();
  }
  if (violations.size() > max_items) os << "; ...";
  return os.str();
}

PatternError::PatternError(ValidationReport report)
    : Error(report.summary()), report_(std::move(report)) {}

namespace {

void check_block_dims(std::size_t rows, std::size_t cols, std::uint32_t b, const char* what) {
  if (b == 0 || rows % b != 0 || cols % b != 0) {
    throw DimensionError(std::string(what) + ": " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " not divisible by block size " +
                         std::to_string(b));
  }
}

bool block_has_bits(const PruneMask& mask, std::size_t br, std::size_t bc, std::size_t b) {
  for (std::size_t r = br * b; r < (br + 1) * b; ++r)
    for (std::size_t c = bc * b; c < (bc + 1) * b; ++c)
      if (mask(r, c)) return true;
  return false;
}

}  // namespace

ValidationReport validate_pattern(const PruneMask& mask, const NmConfig& nm,
                                  const BlockConfig& block) {
  validate_config(nm, block);
  check_block_dims(mask.rows(), mask.cols(), block.b, "validate_pattern");
  const std::size_t b = block.b;
  const std::size_t brows = mask.rows() / b;
  const std::size_t bcols = mask.cols() / b;

  ValidationReport report;
  std::size_t expected = 0;
  for (std::size_t br = 0; br < brows; ++br) {
    std::size_t kept = 0;
    for (std::size_t bc = 0; bc < bcols; ++bc) {
      if (!block_has_bits(mask, br, bc, b)) continue;
      ++kept;
      for (std::size_t r = br * b; r < (br + 1) * b; ++r) {
        for (std::size_t g = bc * b / nm.m; g < (bc + 1) * b / nm.m; ++g) {
          std::size_t ones = 0;
          for (std::size_t c = g * nm.m; c < (g + 1) * nm.m; ++c) ones += mask(r, c) ? 1 : 0;
          if (ones > nm.n) {
            report.violations.push_back(
                {PatternViolation::Kind::GroupOverflow, r, g, ones, nm.n});
          }
        }
      }
    }
    if (br == 0) {
      expected = kept;
    } else if (kept != expected) {
      report.violations.push_back(
          {PatternViolation::Kind::UnevenBlockRow, br, 0, kept, expected});
    }
  }
  return report;
}

std::size_t HybridSparseMatrix::expected_value_count() const {
  if (nm.m == 0) return 0;
  return static_cast<std::size_t>(rows) * kept_cols() / nm.m * nm.n;
}

void check_invariants(const HybridSparseMatrix& h) {
  auto fail = [](const std::string& msg) { throw CorruptionError("hybrid matrix: " + msg); };
  try {
    validate_config(h.nm, h.block);
  } catch (const ArgumentError& e) {
    fail(e.what());
  }
  if (h.rows % h.block.b != 0 || h.cols % h.block.b != 0) {
    fail("dimensions " + std::to_string(h.rows) + "x" + std::to_string(h.cols) +
         " not divisible by block size");
  }
  const std::size_t brows = h.block_rows();
  const std::size_t bcols = h.block_cols();
  if (h.kept_cols_per_blockrow > bcols) fail("kept_cols_per_blockrow exceeds block columns");
  if (h.block_col_indices.size() != brows * h.kept_cols_per_blockrow) {
    fail("block index count " + std::to_string(h.block_col_indices.size()) + ", expected " +
         std::to_string(brows * h.kept_cols_per_blockrow));
  }
  for (std::size_t br = 0; br < brows; ++br) {
    auto idx = h.blocks_of_row(br);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] >= bcols) fail("block row " + std::to_string(br) + " index out of range");
      if (j > 0 && idx[j] <= idx[j - 1]) {
        fail("block row " + std::to_string(br) + " indices not strictly ascending");
      }
    }
  }
  const std::size_t count = h.expected_value_count();
  if (h.values.size() != count || h.offsets.size() != count) {
    fail("value/offset count " + std::to_string(h.values.size()) + "/" +
         std::to_string(h.offsets.size()) + ", expected " + std::to_string(count));
  }
  for (std::size_t base = 0; base < count; base += h.nm.n) {
    for (std::size_t t = 0; t < h.nm.n; ++t) {
      const auto off = h.offsets[base + t];
      if (off >= h.nm.m) fail("offset out of range in group " + std::to_string(base / h.nm.n));
      if (t > 0 && off <= h.offsets[base + t - 1]) {
        fail("offsets not strictly ascending in group " + std::to_string(base / h.nm.n));
      }
    }
  }
}

HybridSparseMatrix encode(const DenseMatrix& w, const PruneMask& mask, const NmConfig& nm,
                          const BlockConfig& block) {
  if (w.rows() != mask.rows() || w.cols() != mask.cols()) {
    throw DimensionError("encode: mask shape differs from matrix shape");
  }
  auto report = validate_pattern(mask, nm, block);
  if (!report.ok()) throw PatternError(std::move(report));

  const std::size_t b = block.b;
  const std::size_t brows = w.rows() / b;
  const std::size_t bcols = w.cols() / b;
  const std::size_t groups_per_block_row = b / nm.m;

  HybridSparseMatrix h;
  h.rows = static_cast<std::uint32_t>(w.rows());
  h.cols = static_cast<std::uint32_t>(w.cols());
  h.nm = nm;
  h.block = block;

  std::vector<std::uint8_t> slot(nm.m);
  for (std::size_t br = 0; br < brows; ++br) {
    std::size_t kept = 0;
    for (std::size_t bc = 0; bc < bcols; ++bc) {
      if (!block_has_bits(mask, br, bc, b)) continue;
      ++kept;
      h.block_col_indices.push_back(static_cast<std::uint32_t>(bc));
      for (std::size_t r = br * b; r < (br + 1) * b; ++r) {
        for (std::size_t g = 0; g < groups_per_block_row; ++g) {
          const std::size_t c0 = bc * b + g * nm.m;
          std::fill(slot.begin(), slot.end(), 0);
          std::size_t used = 0;
          for (std::size_t t = 0; t < nm.m; ++t) {
            if (mask(r, c0 + t)) {
              slot[t] = 1;
              ++used;
            }
          }
          for (std::size_t t = 0; t < nm.m && used < nm.n; ++t) {
            if (!slot[t]) {
              slot[t] = 2;  // zero-valued filler
              ++used;
            }
          }
          for (std::size_t t = 0; t < nm.m; ++t) {
            if (!slot[t]) continue;
            h.offsets.push_back(static_cast<std::uint8_t>(t));
            h.values.push_back(slot[t] == 1 ? w(r, c0 + t) : 0.0);
          }
        }
      }
    }
    if (br == 0) h.kept_cols_per_blockrow = static_cast<std::uint32_t>(kept);
  }
  return h;
}

namespace {

template <typename Visit>
void for_each_stored(const HybridSparseMatrix& h, Visit&& visit) {
  const std::size_t b = h.block.b;
  const std::size_t groups = b / h.nm.m;
  std::size_t pos = 0;
  for (std::size_t br = 0; br < h.block_rows(); ++br) {
    for (auto bc : h.blocks_of_row(br)) {
      for (std::size_t r = br * b; r < (br + 1) * b; ++r) {
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t c0 = bc * b + g * h.nm.m;
          for (std::size_t t = 0; t < h.nm.n; ++t, ++pos) visit(r, c0 + h.offsets[pos], pos);
        }
      }
    }
  }
}

}  // namespace

DenseMatrix decode(const HybridSparseMatrix& h) {
  check_invariants(h);
  DenseMatrix out(h.rows, h.cols, 0.0);
  for_each_stored(h, [&](std::size_t r, std::size_t c, std::size_t pos) { out(r, c) = h.values[pos]; });
  return out;
}

PruneMask stored_mask(const HybridSparseMatrix& h) {
  check_invariants(h);
  PruneMask out(h.rows, h.cols, false);
  for_each_stored(h, [&](std::size_t r, std::size_t c, std::size_t) { out.set(r, c, true); });
  return out;
}

std::uint32_t floor_log2(std::uint64_t x) {
  if (x == 0) throw ArgumentError("floor_log2(0) undefined");
  return static_cast<std::uint32_t>(std::bit_width(x) - 1);
}

std::uint32_t ceil_log2(std::uint64_t x) {
  if (x == 0) throw ArgumentError("ceil_log2(0) undefined");
  return x == 1 ? 0 : static_cast<std::uint32_t>(std::bit_width(x - 1));
}

std::uint32_t index_width(std::uint64_t x) { return x <= 1 ? 1 : std::max(1u, ceil_log2(x)); }

CrispMetadataBits metadata_bits_crisp(std::uint64_t s, std::uint64_t k_prime,
                                      const BlockConfig& block, const NmConfig& nm) {
  nm.validate();
  if (k_prime == 0) return {};
  if (block.b == 0 || k_prime % block.b != 0) {
    throw ArgumentError("metadata_bits_crisp: K'=" + std::to_string(k_prime) +
                        " is not a multiple of the block size");
  }
  const double sk = static_cast<double>(s) * static_cast<double>(k_prime);
  const double bb = static_cast<double>(block.b) * block.b;
  CrispMetadataBits bits;
  bits.block_bits = sk * floor_log2(k_prime / block.b) / bb;
  bits.nm_bits = sk * nm.density() * floor_log2(nm.m);
  return bits;
}

double metadata_block_bits_addressable(std::uint64_t s, std::uint64_t k, std::uint64_t k_prime,
                                       const BlockConfig& block) {
  if (k_prime == 0) return 0.0;
  const std::uint64_t brows = (s + block.b - 1) / block.b;
  const std::uint64_t bcols = k / block.b;
  return static_cast<double>(brows) * static_cast<double>(k_prime / block.b) *
         ceil_log2(std::max<std::uint64_t>(bcols, 1));
}

std::uint64_t metadata_bits_csr(std::uint64_t s, std::uint64_t k, std::uint64_t nnz) {
  if (nnz > s * k) throw ArgumentError("metadata_bits_csr: nnz exceeds S*K");
  return nnz * index_width(k) + (s + 1) * index_width(nnz + 1);
}

std::uint64_t metadata_bits_ellpack(std::uint64_t s, std::uint64_t k,
                                    std::uint64_t max_nnz_per_row) {
  if (max_nnz_per_row > k) throw ArgumentError("metadata_bits_ellpack: row nnz exceeds K");
  return s * max_nnz_per_row * index_width(k);
}

double overall_sparsity(std::uint64_t k, std::uint64_t k_prime, const NmConfig& nm) {
  if (k == 0) throw ArgumentError("overall_sparsity: K must be >= 1");
  if (k_prime > k) throw ArgumentError("overall_sparsity: K' exceeds K");
  return 1.0 - (static_cast<double>(k_prime) / static_cast<double>(k)) * nm.density();
}

std::vector<std::uint64_t> unstructured_row_counts(std::uint64_t s, std::uint64_t k,
                                                   double density, std::uint64_t seed) {
  if (!(density >= 0.0 && density <= 1.0)) {
    throw ArgumentError("unstructured_row_counts: density outside [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::binomial_distribution<std::uint64_t> row_nnz(k, density);
  std::vector<std::uint64_t> rows(s);
  for (auto& r : rows) r = row_nnz(rng);
  return rows;
}

MetadataReport metadata_report(std::uint64_t s, std::uint64_t k, std::uint64_t k_prime,
                               const BlockConfig& block, const NmConfig& nm,
                               std::span<const std::uint64_t> unstructured_rows) {
  if (unstructured_rows.size() != s) {
    throw ArgumentError("metadata_report: need one unstructured row count per row");
  }
  const auto crisp = metadata_bits_crisp(s, k_prime, block, nm);
  MetadataReport rep;
  rep.s = s;
  rep.k = k;
  rep.k_prime = k_prime;
  rep.crisp_block_bits = crisp.block_bits;
  rep.crisp_nm_bits = crisp.nm_bits;
  rep.crisp_total_bits = crisp.total();
  rep.crisp_block_bits_addressable = metadata_block_bits_addressable(s, k, k_prime, block);
  for (auto r : unstructured_rows) {
    rep.unstructured_nnz += r;
    rep.unstructured_max_row_nnz = std::max(rep.unstructured_max_row_nnz, r);
  }
  rep.csr_bits = metadata_bits_csr(s, k, rep.unstructured_nnz);
  rep.ellpack_bits = metadata_bits_ellpack(s, k, rep.unstructured_max_row_nnz);
  rep.overall_sparsity = overall_sparsity(k, k_prime, nm);
  return rep;
}

}  // namespace crisp

// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit tests: seeded random inputs and independent
// re-implementations used as oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "crisp/hybrid_format.hpp"
#include "crisp/tensor.hpp"

namespace crisp::test {

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                                 double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  DenseMatrix m(r, c);
  for (auto& v : m.values()) v = d(rng);
  return m;
}

inline DenseMatrix random_int_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(-8, 8);
  DenseMatrix m(r, c);
  for (auto& v : m.values()) v = d(rng);
  return m;
}

// A random mask in the hybrid pattern: `keep` random block columns per block
// row, and at most n random positions per aligned m-group inside them.
inline PruneMask random_hybrid_mask(std::size_t s, std::size_t k, const NmConfig& nm,
                                    std::uint32_t b, std::size_t keep, std::mt19937_64& rng,
                                    bool exact_n = true) {
  PruneMask mask(s, k, false);
  const std::size_t bc = k / b;
  for (std::size_t br = 0; br < s / b; ++br) {
    std::vector<std::size_t> cols(bc);
    std::iota(cols.begin(), cols.end(), 0);
    std::shuffle(cols.begin(), cols.end(), rng);
    for (std::size_t i = 0; i < keep; ++i) {
      for (std::size_t r = br * b; r < (br + 1) * b; ++r) {
        for (std::size_t g = cols[i] * b; g < (cols[i] + 1) * b; g += nm.m) {
          std::vector<std::size_t> pos(nm.m);
          std::iota(pos.begin(), pos.end(), 0);
          std::shuffle(pos.begin(), pos.end(), rng);
          std::size_t take = exact_n ? nm.n : rng() % (nm.n + 1);
          // A kept block needs at least one bit to count as kept.
          if (r == br * b && g == cols[i] * b) take = std::max<std::size_t>(take, 1);
          for (std::size_t j = 0; j < take; ++j) mask.set(r, g + pos[j], true);
        }
      }
    }
  }
  return mask;
}

// Triple loop, ascending k.
inline DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& w) {
  DenseMatrix out(a.rows(), w.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * w(o, k);
      out(i, o) = acc;
    }
  return out;
}

inline DenseMatrix masked_copy(const DenseMatrix& w, const PruneMask& m) {
  DenseMatrix out(w.rows(), w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) out(r, c) = m(r, c) ? w(r, c) : 0.0;
  return out;
}

inline bool bit_equal(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::signbit(a.values()[i]) != std::signbit(b.values()[i])) return false;
    if (a.values()[i] != b.values()[i]) return false;
  }
  return true;
}

// The closed-form bit counts, evaluated directly in floating point.
inline double ref_block_bits(double s, double kp, double b) {
  if (kp == 0) return 0.0;
  return s * kp * std::floor(std::log2(kp / b)) / (b * b);
}
inline double ref_nm_bits(double s, double kp, double n, double m) {
  return s * kp * (n / m) * std::floor(std::log2(m));
}

}  // namespace crisp::test

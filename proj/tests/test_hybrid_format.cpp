// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "support.hpp"

#include <filesystem>

#include "crisp/binary_io.hpp"
#include "crisp/error.hpp"

using namespace crisp;

TEST_CASE("N:M config parsing and validation") {
  CHECK(NmConfig::parse("2:4") == NmConfig{2, 4});
  CHECK(NmConfig::parse("1:8") == NmConfig{1, 8});
  CHECK(NmConfig{3, 4}.to_string() == "3:4");
  CHECK_THROWS_AS(NmConfig::parse("2-4"), ArgumentError);
  CHECK_THROWS_AS(NmConfig::parse("5:4"), ArgumentError);
  CHECK_THROWS_AS(NmConfig::parse("0:4"), ArgumentError);
  CHECK_THROWS_AS(NmConfig::parse("2:4x"), ArgumentError);
  CHECK_THROWS_AS(validate_config({2, 4}, {6}), ArgumentError);
  CHECK_THROWS_AS(validate_config({2, 8}, {4}), ArgumentError);
  CHECK_NOTHROW(validate_config({2, 4}, {4}));
}

TEST_CASE("validate_pattern") {
  SUBCASE("dense 4x4 mask overflows every 2:4 group") {
    const auto rep = validate_pattern(PruneMask(4, 4, true), {2, 4}, {4});
    REQUIRE(rep.violations.size() == 4);
    for (const auto& v : rep.violations) {
      CHECK(v.kind == PatternViolation::Kind::GroupOverflow);
      CHECK(v.count == 4);
      CHECK(v.limit == 2);
    }
    CHECK(rep.summary().find("group") != std::string::npos);
  }
  SUBCASE("[1,1,0,0] groups in a single block are valid") {
    PruneMask m(4, 4, false);
    for (std::size_t r = 0; r < 4; ++r) {
      m.set(r, 0, true);
      m.set(r, 1, true);
    }
    CHECK(validate_pattern(m, {2, 4}, {4}).ok());
  }
  SUBCASE("block rows with different kept counts") {
    PruneMask m(8, 8, false);
    m.set(0, 0, true);
    m.set(0, 4, true);
    m.set(4, 0, true);
    const auto rep = validate_pattern(m, {2, 4}, {4});
    REQUIRE(rep.violations.size() == 1);
    CHECK(rep.violations[0].kind == PatternViolation::Kind::UnevenBlockRow);
    CHECK(rep.violations[0].row == 1);
    CHECK(rep.violations[0].count == 1);
    CHECK(rep.violations[0].limit == 2);
  }
  CHECK_THROWS_AS(validate_pattern(PruneMask(6, 8), {2, 4}, {4}), DimensionError);
}

TEST_CASE("encode layout and counts") {
  SUBCASE("zero matrix with empty mask") {
    const auto h = encode(DenseMatrix(4, 8), PruneMask(4, 8, false), {2, 4}, {4});
    CHECK(h.kept_cols_per_blockrow == 0);
    CHECK(h.values.empty());
    CHECK(h.block_col_indices.empty());
    CHECK(decode(h) == DenseMatrix(4, 8));
  }
  SUBCASE("one kept block column with 2:4 inside stores S*K'*N/M values") {
    std::mt19937_64 rng(1);
    const auto w = test::random_matrix(4, 8, rng);
    PruneMask m(4, 8, false);
    for (std::size_t r = 0; r < 4; ++r) {
      m.set(r, 4, true);
      m.set(r, 6, true);
    }
    const auto h = encode(w, m, {2, 4}, {4});
    CHECK(h.kept_cols_per_blockrow == 1);
    CHECK(h.block_col_indices == std::vector<std::uint32_t>{1});
    CHECK(h.values.size() == 8);
    CHECK(h.offsets == std::vector<std::uint8_t>{0, 2, 0, 2, 0, 2, 0, 2});
    CHECK(h.values[0] == w(0, 4));
    CHECK(h.values[1] == w(0, 6));
    CHECK(h.values[7] == w(3, 6));
    CHECK(test::bit_equal(decode(h), test::masked_copy(w, m)));
  }
  SUBCASE("short groups are padded with the smallest unused offsets") {
    DenseMatrix w(4, 4, 1.5);
    PruneMask m(4, 4, false);
    m.set(0, 2, true);  // one natural nonzero in row 0, groups in rows 1-3 empty
    m.set(1, 3, true);
    m.set(2, 0, true);
    m.set(3, 1, true);
    const auto h = encode(w, m, {2, 4}, {4});
    CHECK(h.offsets == std::vector<std::uint8_t>{0, 2, 0, 3, 0, 1, 0, 1});
    CHECK(h.values == std::vector<double>{0.0, 1.5, 0.0, 1.5, 1.5, 0.0, 0.0, 1.5});
    CHECK(test::bit_equal(decode(h), test::masked_copy(w, m)));
    CHECK(stored_mask(h).count_kept() == 8);
  }
  SUBCASE("invalid masks are rejected with the violation report") {
    try {
      encode(DenseMatrix(4, 4), PruneMask(4, 4, true), {2, 4}, {4});
      FAIL("expected PatternError");
    } catch (const PatternError& e) {
      CHECK(e.report().violations.size() == 4);
    }
    CHECK_THROWS_AS(encode(DenseMatrix(4, 4), PruneMask(4, 8), {2, 4}, {4}), DimensionError);
  }
}

TEST_CASE("encode/decode round trips equal mask application") {
  std::mt19937_64 rng(2024);
  const NmConfig nms[] = {{1, 4}, {2, 4}, {3, 4}};
  for (int it = 0; it < 300; ++it) {
    const auto nm = nms[it % 3];
    const std::uint32_t b = (it / 3) % 2 ? 8 : 4;
    const std::size_t s = 8, k = 16;
    const std::size_t keep = rng() % (k / b + 1);
    const auto mask = test::random_hybrid_mask(s, k, nm, b, keep, rng, it % 2 == 0);
    const auto w = test::random_matrix(s, k, rng);
    const auto h = encode(w, mask, nm, {b});
    CHECK_NOTHROW(check_invariants(h));
    CHECK(h.values.size() == s * keep * b / nm.m * nm.n);
    CHECK(test::bit_equal(decode(h), test::masked_copy(w, mask)));
    const auto sm = stored_mask(h);
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c < k; ++c)
        if (mask(r, c)) CHECK(sm(r, c));
  }
}

TEST_CASE("check_invariants names the broken invariant") {
  std::mt19937_64 rng(9);
  const auto mask = test::random_hybrid_mask(8, 16, {2, 4}, 4, 2, rng);
  const auto good = encode(test::random_matrix(8, 16, rng), mask, {2, 4}, {4});
  auto expect_msg = [](const HybridSparseMatrix& h, const std::string& needle) {
    try {
      check_invariants(h);
      FAIL("expected CorruptionError");
    } catch (const CorruptionError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  auto h = good;
  std::swap(h.block_col_indices[0], h.block_col_indices[1]);
  expect_msg(h, "ascending");
  h = good;
  h.block_col_indices[1] = 4;
  expect_msg(h, "out of range");
  h = good;
  h.offsets[0] = 4;
  expect_msg(h, "offset out of range");
  h = good;
  h.values.pop_back();
  expect_msg(h, "count");
}

TEST_CASE("crisp metadata closed forms") {
  const auto bits = metadata_bits_crisp(64, 128, {16}, {2, 4});
  CHECK(bits.block_bits == 96.0);
  CHECK(bits.nm_bits == 8192.0);
  CHECK(bits.total() == 8288.0);
  CHECK(metadata_bits_crisp(64, 16, {16}, {2, 4}).block_bits == 0.0);
  CHECK(metadata_bits_crisp(64, 128, {16}, {1, 4}).nm_bits * 2 ==
        metadata_bits_crisp(64, 128, {16}, {2, 4}).nm_bits);
  CHECK(metadata_bits_crisp(64, 0, {16}, {2, 4}).total() == 0.0);
  CHECK_THROWS_AS(metadata_bits_crisp(64, 100, {16}, {2, 4}), ArgumentError);
  CHECK(metadata_block_bits_addressable(64, 256, 128, {16}) == 4 * 8 * 4);
}

TEST_CASE("crisp metadata matches an independent evaluation on random tuples") {
  std::mt19937_64 rng(77);
  for (int it = 0; it < 1000; ++it) {
    const std::uint32_t m = 2u << (rng() % 3);
    const std::uint32_t n = 1 + rng() % m;
    const std::uint32_t b = m << (rng() % 4);
    const std::uint64_t s = 1 + rng() % 2048;
    const std::uint64_t kp = b * (rng() % 300);
    const auto got = metadata_bits_crisp(s, kp, {b}, {n, m});
    CHECK(got.block_bits == test::ref_block_bits(s, kp, b));
    CHECK(got.nm_bits == test::ref_nm_bits(s, kp, n, m));
  }
}

TEST_CASE("CSR and ELLPACK index bits") {
  CHECK(metadata_bits_csr(64, 256, 0) == 65);
  CHECK(metadata_bits_csr(64, 256, 4096) == 33613);
  CHECK(metadata_bits_ellpack(64, 256, 0) == 0);
  CHECK(metadata_bits_ellpack(64, 256, 64) == 32768);
  std::uint64_t prev = 0;
  for (std::uint64_t nnz = 0; nnz <= 64 * 256; nnz += 97) {
    const auto bits = metadata_bits_csr(64, 256, nnz);
    CHECK(bits >= prev);
    prev = bits;
  }
  // Uneven rows: ELLPACK pads to the longest row.
  std::mt19937_64 rng(5);
  for (int it = 0; it < 100; ++it) {
    const auto rows = unstructured_row_counts(32, 512, 0.1 + 0.8 * (rng() % 100) / 100.0, rng());
    std::uint64_t nnz = 0, mx = 0;
    for (auto r : rows) {
      nnz += r;
      mx = std::max(mx, r);
    }
    if (std::all_of(rows.begin(), rows.end(), [&](auto r) { return r == rows[0]; })) continue;
    CHECK(metadata_bits_ellpack(32, 512, mx) >= nnz * index_width(512));
  }
  CHECK(index_width(0) == 1);
  CHECK(index_width(1) == 1);
  CHECK(index_width(256) == 8);
  CHECK(index_width(257) == 9);
}

TEST_CASE("overall sparsity") {
  CHECK(overall_sparsity(256, 256, {2, 4}) == 0.5);
  CHECK(overall_sparsity(256, 128, {2, 4}) == 0.75);
  CHECK(overall_sparsity(256, 0, {2, 4}) == 1.0);
  CHECK_THROWS_AS(overall_sparsity(256, 300, {2, 4}), ArgumentError);
}

TEST_CASE("metadata ordering on a ResNet-50 sized layer") {
  const std::uint64_t s = 512, k = 4608;
  const BlockConfig block{64};
  const NmConfig nm{2, 4};
  for (std::uint64_t kp : {std::uint64_t{1152}, std::uint64_t{576}}) {
    const double density = static_cast<double>(kp) / k * nm.density();
    const auto rows = unstructured_row_counts(s, k, density, 1);
    const auto rep = metadata_report(s, k, kp, block, nm, rows);
    CHECK(rep.crisp_total_bits < static_cast<double>(rep.csr_bits));
    CHECK(rep.csr_bits < rep.ellpack_bits);
    CHECK(rep.csr_ratio() >= 3.0);
  }
}

TEST_CASE(".crsp serialization") {
  std::mt19937_64 rng(31);
  SUBCASE("round trips random instances") {
    for (int it = 0; it < 50; ++it) {
      const NmConfig nm{1 + static_cast<std::uint32_t>(rng() % 3), 4};
      const std::uint32_t b = it % 2 ? 8 : 4;
      const auto mask = test::random_hybrid_mask(16, 32, nm, b, rng() % (32 / b + 1), rng);
      const auto h = encode(test::random_matrix(16, 32, rng), mask, nm, {b});
      CHECK(deserialize(serialize(h)) == h);
    }
  }
  SUBCASE("empty matrix") {
    HybridSparseMatrix h;
    h.block = {4};
    CHECK(deserialize(serialize(h)) == h);
  }
  SUBCASE("corruption is detected") {
    const auto mask = test::random_hybrid_mask(8, 16, {2, 4}, 4, 2, rng);
    const auto bytes = serialize(encode(test::random_matrix(8, 16, rng), mask, {2, 4}, {4}));
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize(bad), FormatError);
    bad = bytes;
    bad[4] = 9;  // version
    CHECK_THROWS_AS(deserialize(bad), FormatError);
    bad = bytes;
    bad.pop_back();
    CHECK_THROWS_AS(deserialize(bad), FormatError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(deserialize(bad), FormatError);
    bad = bytes;
    bad[4 + 4 + 4 + 4 + 2 + 1 + 1 + 4] = 0xff;  // first block index
    CHECK_THROWS_AS(deserialize(bad), CorruptionError);
  }
  SUBCASE("file round trip") {
    const auto path = (std::filesystem::temp_directory_path() / "crisp_test_rt.crsp").string();
    const auto mask = test::random_hybrid_mask(8, 16, {3, 4}, 8, 1, rng);
    const auto h = encode(test::random_matrix(8, 16, rng), mask, {3, 4}, {8});
    write_crsp(path, h);
    CHECK(read_crsp(path) == h);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_crsp(path), Error);
  }
}

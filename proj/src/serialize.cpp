// SPDX-License-Identifier: Apache-2.0
//
// .crsp layout (little-endian):
//   "CRSP" | u32 version=1 | u32 rows | u32 cols | u16 b | u8 n | u8 m |
//   u32 kept_cols_per_blockrow | u16 block_col_indices[] | u8 offsets[] |
//   f64 values[]
// Array lengths follow from the header; trailing bytes are rejected.
#include <fstream>
#include <iterator>

#include "crisp/binary_io.hpp"
#include "crisp/hybrid_format.hpp"

namespace crisp {

namespace {
constexpr char kMagic[] = "CRSP";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize(const HybridSparseMatrix& h) {
  check_invariants(h);
  if (h.block.b > 0xFFFF || h.nm.m > 0xFF) {
    throw ArgumentError("serialize: block size or m exceeds the on-disk field width");
  }
  if (h.block_cols() > 0x10000) {
    throw ArgumentError("serialize: block column indices do not fit in u16");
  }
  io::ByteWriter out;
  out.magic(kMagic);
  out.u32(kVersion);
  out.u32(h.rows);
  out.u32(h.cols);
  out.u16(static_cast<std::uint16_t>(h.block.b));
  out.u8(static_cast<std::uint8_t>(h.nm.n));
  out.u8(static_cast<std::uint8_t>(h.nm.m));
  out.u32(h.kept_cols_per_blockrow);
  for (auto idx : h.block_col_indices) out.u16(static_cast<std::uint16_t>(idx));
  for (auto off : h.offsets) out.u8(off);
  for (auto v : h.values) out.f64(v);
  return out.take();
}

HybridSparseMatrix deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes, "crsp");
  in.expect_magic(kMagic);
  in.expect_version(kVersion);
  HybridSparseMatrix h;
  h.rows = in.u32();
  h.cols = in.u32();
  h.block.b = in.u16();
  h.nm.n = in.u8();
  h.nm.m = in.u8();
  h.kept_cols_per_blockrow = in.u32();
  if (h.block.b == 0 || h.nm.m == 0 || h.rows % h.block.b != 0 || h.cols % h.block.b != 0) {
    throw CorruptionError("crsp: header describes an invalid block/N:M layout");
  }
  const std::uint64_t n_idx =
      static_cast<std::uint64_t>(h.block_rows()) * h.kept_cols_per_blockrow;
  in.need_elements(n_idx, 2);
  h.block_col_indices.resize(n_idx);
  for (auto& idx : h.block_col_indices) idx = in.u16();
  const std::uint64_t n_val = h.expected_value_count();
  in.need_elements(n_val, 9);
  h.offsets.resize(n_val);
  for (auto& off : h.offsets) off = in.u8();
  h.values.resize(n_val);
  for (auto& v : h.values) v = in.f64();
  in.expect_end();
  check_invariants(h);
  return h;
}

void write_crsp(const std::string& path, const HybridSparseMatrix& h) {
  io::write_file(path, serialize(h));
}

HybridSparseMatrix read_crsp(const std::string& path) { return deserialize(io::read_file(path)); }

namespace io {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

}  // namespace io
}  // namespace crisp

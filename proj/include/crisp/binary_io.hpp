// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte writer/reader used by the .crsp, model and dataset
// files. Every file starts with a 4-byte magic and a u32 version.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisp/error.hpp"

namespace crisp::io {

class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  void expect_magic(std::string_view tag) {
    need(tag.size());
    if (std::memcmp(bytes_.data() + pos_, tag.data(), tag.size()) != 0) {
      throw FormatError(what_ + ": bad magic (expected \"" + std::string(tag) + "\")");
    }
    pos_ += tag.size();
  }
  void expect_version(std::uint32_t version) {
    const auto v = u32();
    if (v != version) {
      throw FormatError(what_ + ": version " + std::to_string(v) + " unsupported (expected " +
                        std::to_string(version) + ")");
    }
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }

  // Fails early when a declared element count cannot fit in what is left.
  void need_elements(std::uint64_t count, std::size_t width) {
    if (count > (bytes_.size() - pos_) / width) {
      throw FormatError(what_ + ": truncated (declared " + std::to_string(count) +
                        " elements, not enough bytes)");
    }
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(what_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
    }
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace crisp::io

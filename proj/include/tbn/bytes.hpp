#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbn/error.hpp"

namespace tbn {

// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void tag(std::string_view four_cc) {
    for (char c : four_cc) buf_.push_back(static_cast<std::uint8_t>(c));
  }

  const std::vector<std::uint8_t>& bytes() const& noexcept { return buf_; }
  std::vector<std::uint8_t> bytes() && noexcept { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Little-endian byte source. Running off the end raises `on_short` with the
// byte offset where the read started.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, ErrorCode on_short)
      : data_(data), on_short_(on_short) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
           std::uint32_t{b[3]} << 24;
  }
  std::uint32_t u32_be() {
    auto b = take(4);
    return std::uint32_t{b[3]} | std::uint32_t{b[2]} << 8 | std::uint32_t{b[1]} << 16 |
           std::uint32_t{b[0]} << 24;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (data_.size() - pos_ < n)
      fail(on_short_, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                          ", only " + std::to_string(data_.size() - pos_) + " left");
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  ErrorCode on_short_;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

// Writes to `path + ".tmp"` then renames, so a failed write never leaves a
// partial file at `path`.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace tbn

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tbn/quantizer.hpp"

namespace tbn {

// Four codes per byte, element i in bits 2*(i%4)..2*(i%4)+1 of byte i/4.
// Pair values: -2 -> 00, -1 -> 01, 1 -> 10, 2 -> 11. Unused trailing pairs
// are zero.
struct PackedCodes {
  std::vector<std::uint8_t> bytes;
  std::size_t n = 0;

  static constexpr std::size_t byte_count(std::size_t n) noexcept { return (n + 3) / 4; }

  friend bool operator==(const PackedCodes&, const PackedCodes&) = default;
};

PackedCodes pack_codes(std::span<const Code> codes);
CodeArray unpack_codes(const PackedCodes& packed);

// Decode a single element without unpacking the whole array.
inline Code packed_code_at(std::span<const std::uint8_t> bytes, std::size_t i) noexcept {
  static constexpr Code kLut[4] = {-2, -1, 1, 2};
  return kLut[(bytes[i >> 2] >> (2 * (i & 3))) & 3u];
}

struct LayerMeta {
  std::uint32_t in_channels = 0;
  std::uint32_t out_channels = 0;  // K
  std::uint32_t filter_h = 0;
  std::uint32_t filter_w = 0;
  std::uint32_t stride = 1;
  std::uint32_t padding = 0;

  std::size_t filter_elements() const noexcept {
    return std::size_t{in_channels} * filter_h * filter_w;
  }

  friend bool operator==(const LayerMeta&, const LayerMeta&) = default;
};

struct PackedFilter {
  float alpha = 1.0f;
  PackedCodes codes;

  friend bool operator==(const PackedFilter&, const PackedFilter&) = default;
};

struct TbnLayer {
  LayerMeta meta;
  std::vector<PackedFilter> filters;  // K entries
  std::optional<std::vector<float>> bias;

  // Unpacked view of filter k, shaped (in_c, fh, fw).
  TwoBitFilter filter(std::size_t k) const;

  friend bool operator==(const TbnLayer&, const TbnLayer&) = default;
};

// Inference artifact: two-bit filters, one scale per filter, optional
// full-precision biases. Consecutive layers are joined by ReLU.
struct TbnModel {
  std::vector<TbnLayer> layers;

  friend bool operator==(const TbnModel&, const TbnModel&) = default;
};

TbnLayer make_layer(const LayerMeta& meta, std::span<const TwoBitFilter> filters,
                    std::optional<std::vector<float>> bias = std::nullopt);

// Checks the model invariants; throws the same codes load_model would.
void validate_model(const TbnModel& model);

// TBN1 container:
//   "TBN1" | u32 layer_count | per layer: u32 in_c, out_c, fh, fw, stride,
//   padding, u8 has_bias | per filter: f32 alpha, ceil(in_c*fh*fw/4) bytes |
//   if has_bias: out_c x f32.
std::vector<std::uint8_t> save_model(const TbnModel& model);
TbnModel load_model(std::span<const std::uint8_t> bytes);

void save_model_file(const TbnModel& model, const std::string& path);
TbnModel load_model_file(const std::string& path);

std::size_t serialized_size(const TbnModel& model);

struct MemorySize {
  std::uint64_t two_bit_bytes = 0;
  std::uint64_t double_bytes = 0;
  double ratio = 0.0;  // double_bytes / two_bit_bytes; 0 when there are no parameters
};

// Footprint of `param_count` weights at `bits_per_weight` plus a fixed
// `alpha_overhead`, against an 8-byte-per-weight baseline.
MemorySize model_size_bytes(std::uint64_t param_count, unsigned bits_per_weight = 2,
                            std::uint64_t alpha_overhead = 0);

}  // namespace tbn

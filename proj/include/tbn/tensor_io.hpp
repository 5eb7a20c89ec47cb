#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tbn/tensor.hpp"

namespace tbn {

// TBNF raw tensor record: "TBNF" | u32 rank | rank x u32 dims | binary32
// values, little-endian, no padding. A file may hold several records
// back to back.
std::vector<std::uint8_t> encode_tbnf(const Tensor& t);
void append_tbnf(std::vector<std::uint8_t>& out, const Tensor& t);

// Decodes every record in `bytes`. Truncation raises TruncatedInput and a
// wrong tag BadMagic; both messages carry the byte offset.
std::vector<Tensor> decode_tbnf(std::span<const std::uint8_t> bytes);

}  // namespace tbn

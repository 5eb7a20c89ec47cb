#include "tbn/packed.hpp"

#include <cmath>

#include "tbn/bytes.hpp"
#include "tbn/error.hpp"

namespace tbn {

namespace {

std::uint8_t code_to_pair(Code c) {
  switch (c) {
    case -2: return 0b00;
    case -1: return 0b01;
    case 1: return 0b10;
    case 2: return 0b11;
    default: break;
  }
  fail(ErrorCode::InvalidCode, "code " + std::to_string(int{c}) + " outside {-2,-1,1,2}");
}

constexpr std::uint32_t kMaxDim = 1u << 16;

}  // namespace

PackedCodes pack_codes(std::span<const Code> codes) {
  PackedCodes p;
  p.n = codes.size();
  p.bytes.assign(PackedCodes::byte_count(codes.size()), 0);
  for (std::size_t i = 0; i < codes.size(); ++i)
    p.bytes[i >> 2] |= static_cast<std::uint8_t>(code_to_pair(codes[i]) << (2 * (i & 3)));
  return p;
}

CodeArray unpack_codes(const PackedCodes& packed) {
  if (packed.bytes.size() < PackedCodes::byte_count(packed.n))
    fail(ErrorCode::TruncatedInput, std::to_string(packed.n) + " codes need " +
                                        std::to_string(PackedCodes::byte_count(packed.n)) +
                                        " bytes, got " + std::to_string(packed.bytes.size()));
  CodeArray codes(packed.n);
  for (std::size_t i = 0; i < packed.n; ++i) codes[i] = packed_code_at(packed.bytes, i);
  return codes;
}

TwoBitFilter TbnLayer::filter(std::size_t k) const {
  const PackedFilter& f = filters.at(k);
  return TwoBitFilter{Shape{meta.in_channels, meta.filter_h, meta.filter_w},
                      unpack_codes(f.codes), f.alpha};
}

TbnLayer make_layer(const LayerMeta& meta, std::span<const TwoBitFilter> filters,
                    std::optional<std::vector<float>> bias) {
  if (filters.size() != meta.out_channels)
    fail(ErrorCode::ShapeMismatch, "layer declares " + std::to_string(meta.out_channels) +
                                       " filters, got " + std::to_string(filters.size()));
  TbnLayer layer{meta, {}, std::move(bias)};
  layer.filters.reserve(filters.size());
  for (const auto& f : filters) {
    if (f.codes.size() != meta.filter_elements())
      fail(ErrorCode::ShapeMismatch, "filter has " + std::to_string(f.codes.size()) +
                                         " codes, layer expects " +
                                         std::to_string(meta.filter_elements()));
    layer.filters.push_back(PackedFilter{f.alpha, pack_codes(f.codes)});
  }
  validate_model(TbnModel{{layer}});
  return layer;
}

void validate_model(const TbnModel& model) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const TbnLayer& layer = model.layers[l];
    const LayerMeta& m = layer.meta;
    const std::string where = "layer " + std::to_string(l);
    if (m.in_channels == 0 || m.out_channels == 0 || m.filter_h == 0 || m.filter_w == 0 ||
        m.stride == 0)
      fail(ErrorCode::CorruptLength, where + ": zero extent in layer metadata");
    if (layer.filters.size() != m.out_channels)
      fail(ErrorCode::CorruptLength, where + ": filter count differs from out_channels");
    if (layer.bias && layer.bias->size() != m.out_channels)
      fail(ErrorCode::CorruptLength, where + ": bias length differs from out_channels");
    const std::size_t n = m.filter_elements();
    for (std::size_t k = 0; k < layer.filters.size(); ++k) {
      const PackedFilter& f = layer.filters[k];
      if (!(f.alpha > 0.0f) || !std::isfinite(f.alpha))
        fail(ErrorCode::NonPositiveAlpha, where + " filter " + std::to_string(k) + ": alpha " +
                                              std::to_string(f.alpha));
      if (f.codes.n != n || f.codes.bytes.size() != PackedCodes::byte_count(n))
        fail(ErrorCode::CorruptLength, where + " filter " + std::to_string(k) +
                                           ": packed size inconsistent with metadata");
      if (n % 4 != 0) {
        const std::uint8_t used_mask = static_cast<std::uint8_t>((1u << (2 * (n % 4))) - 1);
        if (f.codes.bytes.back() & ~used_mask)
          fail(ErrorCode::NonZeroPadBits, where + " filter " + std::to_string(k));
      }
    }
    if (layer.bias) {
      for (float b : *layer.bias)
        if (!std::isfinite(b)) fail(ErrorCode::NonFiniteValue, where + ": non-finite bias");
    }
  }
}

std::vector<std::uint8_t> save_model(const TbnModel& model) {
  validate_model(model);
  ByteWriter w;
  w.tag("TBN1");
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const TbnLayer& layer : model.layers) {
    const LayerMeta& m = layer.meta;
    for (std::uint32_t v : {m.in_channels, m.out_channels, m.filter_h, m.filter_w, m.stride,
                            m.padding})
      w.u32(v);
    w.u8(layer.bias ? 1 : 0);
    for (const PackedFilter& f : layer.filters) {
      w.f32(f.alpha);
      w.raw(f.codes.bytes);
    }
    if (layer.bias)
      for (float b : *layer.bias) w.f32(b);
  }
  return std::move(w).bytes();
}

TbnModel load_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::CorruptLength);
  if (bytes.size() < 4) fail(ErrorCode::BadMagic, "file shorter than magic");
  auto magic = r.take(4);
  if (magic[0] != 'T' || magic[1] != 'B' || magic[2] != 'N')
    fail(ErrorCode::BadMagic, "expected TBN1");
  if (magic[3] != '1')
    fail(ErrorCode::UnsupportedVersion, std::string("format version '") +
                                            static_cast<char>(magic[3]) + "'");
  const std::uint32_t layer_count = r.u32();
  // Every layer needs at least 25 header bytes; reject impossible counts up front.
  if (layer_count > r.remaining() / 25)
    fail(ErrorCode::CorruptLength, "layer count " + std::to_string(layer_count) +
                                       " exceeds file size");
  TbnModel model;
  model.layers.reserve(layer_count);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    TbnLayer layer;
    LayerMeta& m = layer.meta;
    m.in_channels = r.u32();
    m.out_channels = r.u32();
    m.filter_h = r.u32();
    m.filter_w = r.u32();
    m.stride = r.u32();
    m.padding = r.u32();
    const std::uint8_t has_bias = r.u8();
    const std::string where = "layer " + std::to_string(l);
    if (has_bias > 1) fail(ErrorCode::CorruptLength, where + ": has_bias flag " +
                                                         std::to_string(has_bias));
    for (std::uint32_t v : {m.in_channels, m.out_channels, m.filter_h, m.filter_w})
      if (v == 0 || v > kMaxDim) fail(ErrorCode::CorruptLength, where + ": bad extent");
    if (m.stride == 0) fail(ErrorCode::CorruptLength, where + ": zero stride");
    const std::size_t n = m.filter_elements();
    const std::size_t per_filter = 4 + PackedCodes::byte_count(n);
    if (m.out_channels > r.remaining() / per_filter)
      fail(ErrorCode::CorruptLength, where + ": filters exceed file size");
    layer.filters.reserve(m.out_channels);
    for (std::uint32_t k = 0; k < m.out_channels; ++k) {
      PackedFilter f;
      f.alpha = r.f32();
      auto raw = r.take(PackedCodes::byte_count(n));
      f.codes.bytes.assign(raw.begin(), raw.end());
      f.codes.n = n;
      layer.filters.push_back(std::move(f));
    }
    if (has_bias) {
      std::vector<float> bias(m.out_channels);
      for (auto& b : bias) b = r.f32();
      layer.bias = std::move(bias);
    }
    model.layers.push_back(std::move(layer));
  }
  if (!r.done())
    fail(ErrorCode::CorruptLength, std::to_string(r.remaining()) + " trailing bytes");
  validate_model(model);
  return model;
}

void save_model_file(const TbnModel& model, const std::string& path) {
  write_file_atomic(path, save_model(model));
}

TbnModel load_model_file(const std::string& path) { return load_model(read_file_bytes(path)); }

std::size_t serialized_size(const TbnModel& model) {
  std::size_t total = 8;
  for (const TbnLayer& layer : model.layers) {
    total += 6 * 4 + 1;
    total += layer.meta.out_channels * (4 + PackedCodes::byte_count(layer.meta.filter_elements()));
    if (layer.bias) total += 4 * layer.meta.out_channels;
  }
  return total;
}

MemorySize model_size_bytes(std::uint64_t param_count, unsigned bits_per_weight,
                            std::uint64_t alpha_overhead) {
  MemorySize s;
  s.two_bit_bytes = (param_count * bits_per_weight + 7) / 8 + alpha_overhead;
  s.double_bytes = 8 * param_count;
  s.ratio = param_count == 0 ? 0.0
                             : static_cast<double>(s.double_bytes) /
                                   static_cast<double>(s.two_bit_bytes);
  return s;
}

}  // namespace tbn

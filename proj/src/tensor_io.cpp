#include "tbn/tensor_io.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "tbn/bytes.hpp"

namespace tbn {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::SinkWriteError, "cannot open " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::remove(tmp.c_str());
      fail(ErrorCode::SinkWriteError, "short write to " + tmp);
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    fail(ErrorCode::SinkWriteError, "cannot rename " + tmp + " to " + path);
  }
}

void append_tbnf(std::vector<std::uint8_t>& out, const Tensor& t) {
  ByteWriter w;
  w.tag("TBNF");
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape().dims()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.values()) w.f32(v);
  const auto& b = w.bytes();
  out.insert(out.end(), b.begin(), b.end());
}

std::vector<std::uint8_t> encode_tbnf(const Tensor& t) {
  std::vector<std::uint8_t> out;
  append_tbnf(out, t);
  return out;
}

std::vector<Tensor> decode_tbnf(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::TruncatedInput);
  std::vector<Tensor> out;
  while (!r.done()) {
    const std::size_t start = r.offset();
    auto tag = r.take(4);
    if (!(tag[0] == 'T' && tag[1] == 'B' && tag[2] == 'N' && tag[3] == 'F'))
      fail(ErrorCode::BadMagic, "expected TBNF record at offset " + std::to_string(start));
    const std::uint32_t rank = r.u32();
    if (rank == 0)
      fail(ErrorCode::InvalidShape, "rank 0 record at offset " + std::to_string(start));
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    Shape shape(std::move(dims));
    if (shape.element_count() > r.remaining() / 4)
      fail(ErrorCode::TruncatedInput, "record at offset " + std::to_string(start) + " needs " +
                                          std::to_string(shape.element_count()) +
                                          " values, only " + std::to_string(r.remaining()) +
                                          " bytes left at offset " + std::to_string(r.offset()));
    auto raw = r.take(shape.element_count() * 4);
    std::vector<float> values(shape.element_count());
    ByteReader vr(raw, ErrorCode::TruncatedInput);
    for (auto& v : values) v = vr.f32();
    out.emplace_back(std::move(shape), std::move(values));
  }
  return out;
}

}  // namespace tbn

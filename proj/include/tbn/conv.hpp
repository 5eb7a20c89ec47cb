#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "tbn/packed.hpp"
#include "tbn/quantizer.hpp"
#include "tbn/tensor.hpp"

namespace tbn {

// Zero-padded cross-correlation geometry.
struct ConvSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// floor((in + 2*pad - k) / stride) + 1; ShapeMismatch when that is < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t k, ConvSpec spec);

// Full-precision multiply-accumulate cross-correlation.
// input (c, h, w), filter (c, fh, fw) -> (oh, ow).
Tensor conv_reference(const Tensor& input, const Tensor& filter, ConvSpec spec);

// Multiplication-free accumulation over two-bit codes. Each tap adds or
// subtracts the input (once for |code| = 1, doubled by self-addition for
// |code| = 2); the only multiply is one scale by alpha per output element.
// The accumulator must provide add/sub/add_twice/sub_twice/reset and
// scaled(alpha) -> float.
class WideAccumulator {
 public:
  void reset() noexcept { sum_ = 0.0; }
  void add(float x) noexcept { sum_ += x; }
  void sub(float x) noexcept { sum_ -= x; }
  void add_twice(float x) noexcept {
    const double d = x;
    sum_ += d + d;
  }
  void sub_twice(float x) noexcept {
    const double d = x;
    sum_ -= d + d;
  }
  float scaled(float alpha) const noexcept { return static_cast<float>(sum_ * alpha); }

 private:
  double sum_ = 0.0;
};

// WideAccumulator that counts every multiplication it performs.
class CountingAccumulator {
 public:
  explicit CountingAccumulator(std::size_t* multiplies) : multiplies_(multiplies) {}

  void reset() noexcept { inner_.reset(); }
  void add(float x) noexcept { inner_.add(x); }
  void sub(float x) noexcept { inner_.sub(x); }
  void add_twice(float x) noexcept { inner_.add_twice(x); }
  void sub_twice(float x) noexcept { inner_.sub_twice(x); }
  float scaled(float alpha) const noexcept {
    ++*multiplies_;
    return inner_.scaled(alpha);
  }

 private:
  WideAccumulator inner_;
  std::size_t* multiplies_;
};

namespace detail {

void check_conv_shapes(const Shape& input, const Shape& filter, ConvSpec spec);

template <class Accumulator, class CodeAt>
void mfree_kernel(const Tensor& input, const Shape& filter_shape, CodeAt&& code_at, float alpha,
                  ConvSpec spec, Accumulator& acc, std::span<float> out) {
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t fh = filter_shape[1], fw = filter_shape[2];
  const std::size_t oh = conv_output_extent(h, fh, spec);
  const std::size_t ow = conv_output_extent(w, fw, spec);
  const auto x = input.values();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(spec.padding);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      acc.reset();
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * spec.stride) - pad;
      const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * spec.stride) - pad;
      std::size_t tap = 0;
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < fh; ++ky) {
          const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            tap += fw;
            continue;
          }
          const std::size_t row = (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t kx = 0; kx < fw; ++kx, ++tap) {
            const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const float v = x[row + static_cast<std::size_t>(ix)];
            switch (code_at(tap)) {
              case 1: acc.add(v); break;
              case -1: acc.sub(v); break;
              case 2: acc.add_twice(v); break;
              case -2: acc.sub_twice(v); break;
            }
          }
        }
      }
      out[oy * ow + ox] = acc.scaled(alpha);
    }
  }
}

}  // namespace detail

// input (c, h, w) against a two-bit filter (c, fh, fw) -> (oh, ow).
Tensor conv_mfree(const Tensor& input, const TwoBitFilter& filter, ConvSpec spec);

// Same, decoding bit pairs straight from the packed representation.
Tensor conv_mfree(const Tensor& input, const PackedFilter& filter, const Shape& filter_shape,
                  ConvSpec spec);

// conv_mfree through CountingAccumulator; returns the output and the number
// of multiplications performed.
std::pair<Tensor, std::size_t> conv_mfree_counted(const Tensor& input, const TwoBitFilter& filter,
                                                  ConvSpec spec);

// Stacks K filter responses into (K, oh, ow) and adds bias[k] to map k.
Tensor conv_layer_forward(const Tensor& input, std::span<const TwoBitFilter> filters,
                          const std::optional<std::vector<float>>& bias, ConvSpec spec);

// Full-precision counterpart of conv_layer_forward.
Tensor conv_layer_reference(const Tensor& input, std::span<const Tensor> filters,
                            const std::optional<std::vector<float>>& bias, ConvSpec spec);

// Runs a TBN1 model on one (c, h, w) input: conv layers joined by ReLU, no
// activation after the last layer.
Tensor model_forward(const TbnModel& model, const Tensor& input);

// The same network evaluated with conv_reference on alpha * codes.
Tensor model_forward_reference(const TbnModel& model, const Tensor& input);

}  // namespace tbn

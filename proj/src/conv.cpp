#include "tbn/conv.hpp"

#include <algorithm>

#include "tbn/error.hpp"

namespace tbn {

std::size_t conv_output_extent(std::size_t in, std::size_t k, ConvSpec spec) {
  if (spec.stride == 0) fail(ErrorCode::ShapeMismatch, "stride must be positive");
  const std::size_t padded = in + 2 * spec.padding;
  if (padded < k)
    fail(ErrorCode::ShapeMismatch, "kernel extent " + std::to_string(k) +
                                       " exceeds padded input " + std::to_string(padded));
  return (padded - k) / spec.stride + 1;
}

namespace detail {

void check_conv_shapes(const Shape& input, const Shape& filter, ConvSpec spec) {
  if (input.rank() != 3 || filter.rank() != 3)
    fail(ErrorCode::ShapeMismatch, "expected (c,h,w) input and (c,fh,fw) filter, got " +
                                       input.to_string() + " and " + filter.to_string());
  if (input[0] != filter[0])
    fail(ErrorCode::ShapeMismatch, "input has " + std::to_string(input[0]) +
                                       " channels, filter has " + std::to_string(filter[0]));
  conv_output_extent(input[1], filter[1], spec);
  conv_output_extent(input[2], filter[2], spec);
}

}  // namespace detail

Tensor conv_reference(const Tensor& input, const Tensor& filter, ConvSpec spec) {
  detail::check_conv_shapes(input.shape(), filter.shape(), spec);
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t fh = filter.dim(1), fw = filter.dim(2);
  const std::size_t oh = conv_output_extent(h, fh, spec);
  const std::size_t ow = conv_output_extent(w, fw, spec);
  const auto x = input.values();
  const auto k = filter.values();
  std::vector<float> out(oh * ow);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double acc = 0.0;
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < fh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) -
                                    static_cast<std::ptrdiff_t>(spec.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < fw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) -
                                      static_cast<std::ptrdiff_t>(spec.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            acc += static_cast<double>(x[(ci * h + static_cast<std::size_t>(iy)) * w +
                                         static_cast<std::size_t>(ix)]) *
                   k[(ci * fh + ky) * fw + kx];
          }
        }
      }
      out[oy * ow + ox] = static_cast<float>(acc);
    }
  }
  return Tensor(Shape{oh, ow}, std::move(out));
}

namespace {

void check_codes(const TwoBitFilter& filter) {
  if (filter.codes.size() != filter.shape.element_count())
    fail(ErrorCode::ShapeMismatch, "filter has " + std::to_string(filter.codes.size()) +
                                       " codes for shape " + filter.shape.to_string());
  for (Code c : filter.codes)
    if (!is_valid_code(c))
      fail(ErrorCode::InvalidCode, "code " + std::to_string(int{c}) + " outside {-2,-1,1,2}");
}

template <class Accumulator>
Tensor run_mfree(const Tensor& input, const TwoBitFilter& filter, ConvSpec spec,
                 Accumulator& acc) {
  detail::check_conv_shapes(input.shape(), filter.shape, spec);
  check_codes(filter);
  const std::size_t oh = conv_output_extent(input.dim(1), filter.shape[1], spec);
  const std::size_t ow = conv_output_extent(input.dim(2), filter.shape[2], spec);
  std::vector<float> out(oh * ow);
  const Code* codes = filter.codes.data();
  detail::mfree_kernel(input, filter.shape, [codes](std::size_t i) { return codes[i]; },
                       filter.alpha, spec, acc, out);
  return Tensor(Shape{oh, ow}, std::move(out));
}

}  // namespace

Tensor conv_mfree(const Tensor& input, const TwoBitFilter& filter, ConvSpec spec) {
  WideAccumulator acc;
  return run_mfree(input, filter, spec, acc);
}

Tensor conv_mfree(const Tensor& input, const PackedFilter& filter, const Shape& filter_shape,
                  ConvSpec spec) {
  detail::check_conv_shapes(input.shape(), filter_shape, spec);
  if (filter.codes.n != filter_shape.element_count() ||
      filter.codes.bytes.size() < PackedCodes::byte_count(filter.codes.n))
    fail(ErrorCode::ShapeMismatch, "packed filter size inconsistent with " +
                                       filter_shape.to_string());
  const std::size_t oh = conv_output_extent(input.dim(1), filter_shape[1], spec);
  const std::size_t ow = conv_output_extent(input.dim(2), filter_shape[2], spec);
  std::vector<float> out(oh * ow);
  WideAccumulator acc;
  std::span<const std::uint8_t> bytes = filter.codes.bytes;
  detail::mfree_kernel(input, filter_shape,
                       [bytes](std::size_t i) { return packed_code_at(bytes, i); },
                       filter.alpha, spec, acc, out);
  return Tensor(Shape{oh, ow}, std::move(out));
}

std::pair<Tensor, std::size_t> conv_mfree_counted(const Tensor& input, const TwoBitFilter& filter,
                                                  ConvSpec spec) {
  std::size_t multiplies = 0;
  CountingAccumulator acc(&multiplies);
  Tensor out = run_mfree(input, filter, spec, acc);
  return {std::move(out), multiplies};
}

namespace {

template <class Filter, class Conv>
Tensor stack_maps(const Tensor& input, std::span<const Filter> filters,
                  const std::optional<std::vector<float>>& bias, Conv&& conv) {
  if (filters.empty()) fail(ErrorCode::ShapeMismatch, "layer has no filters");
  if (bias && bias->size() != filters.size())
    fail(ErrorCode::ShapeMismatch, "bias length " + std::to_string(bias->size()) + " for " +
                                       std::to_string(filters.size()) + " filters");
  std::vector<float> out;
  std::size_t oh = 0, ow = 0;
  for (std::size_t k = 0; k < filters.size(); ++k) {
    Tensor map = conv(input, filters[k]);
    if (k == 0) {
      oh = map.dim(0);
      ow = map.dim(1);
      out.reserve(filters.size() * oh * ow);
    } else if (map.dim(0) != oh || map.dim(1) != ow) {
      fail(ErrorCode::ShapeMismatch, "filters in a layer must share a shape");
    }
    const float b = bias ? (*bias)[k] : 0.0f;
    for (float v : map.values()) out.push_back(v + b);
  }
  return Tensor(Shape{filters.size(), oh, ow}, std::move(out));
}

}  // namespace

Tensor conv_layer_forward(const Tensor& input, std::span<const TwoBitFilter> filters,
                          const std::optional<std::vector<float>>& bias, ConvSpec spec) {
  if (!filters.empty())
    for (const auto& f : filters)
      if (f.shape != filters.front().shape)
        fail(ErrorCode::ShapeMismatch, "filters in a layer must share a shape");
  return stack_maps(input, filters, bias, [spec](const Tensor& in, const TwoBitFilter& f) {
    return conv_mfree(in, f, spec);
  });
}

Tensor conv_layer_reference(const Tensor& input, std::span<const Tensor> filters,
                            const std::optional<std::vector<float>>& bias, ConvSpec spec) {
  if (!filters.empty())
    for (const auto& f : filters)
      if (f.shape() != filters.front().shape())
        fail(ErrorCode::ShapeMismatch, "filters in a layer must share a shape");
  return stack_maps(input, filters, bias, [spec](const Tensor& in, const Tensor& f) {
    return conv_reference(in, f, spec);
  });
}

namespace {

Tensor relu(const Tensor& t) {
  std::vector<float> v(t.values().begin(), t.values().end());
  for (float& x : v) x = std::max(x, 0.0f);
  return Tensor(t.shape(), std::move(v));
}

template <class LayerFn>
Tensor run_chain(const TbnModel& model, const Tensor& input, LayerFn&& layer_fn) {
  if (model.layers.empty()) return input;
  Tensor x = input;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const TbnLayer& layer = model.layers[l];
    if (x.rank() != 3 || x.dim(0) != layer.meta.in_channels)
      fail(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " expects " +
                                         std::to_string(layer.meta.in_channels) +
                                         " input channels, got shape " + x.shape().to_string());
    x = layer_fn(x, layer);
    if (l + 1 < model.layers.size()) x = relu(x);
  }
  return x;
}

ConvSpec spec_of(const LayerMeta& m) { return ConvSpec{m.stride, m.padding}; }

}  // namespace

Tensor model_forward(const TbnModel& model, const Tensor& input) {
  return run_chain(model, input, [](const Tensor& x, const TbnLayer& layer) {
    std::vector<TwoBitFilter> filters;
    filters.reserve(layer.filters.size());
    for (std::size_t k = 0; k < layer.filters.size(); ++k) filters.push_back(layer.filter(k));
    return conv_layer_forward(x, filters, layer.bias, spec_of(layer.meta));
  });
}

Tensor model_forward_reference(const TbnModel& model, const Tensor& input) {
  return run_chain(model, input, [](const Tensor& x, const TbnLayer& layer) {
    std::vector<Tensor> filters;
    filters.reserve(layer.filters.size());
    for (std::size_t k = 0; k < layer.filters.size(); ++k)
      filters.push_back(layer.filter(k).approximate());
    return conv_layer_reference(x, filters, layer.bias, spec_of(layer.meta));
  });
}

}  // namespace tbn

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tbn/conv.hpp"
#include "tbn/quantizer.hpp"
#include "tbn/tensor.hpp"

namespace tbn {

enum class LayerKind { Conv, Relu, MaxPool2 };

struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t filter_h = 1;
  std::size_t filter_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = true;

  Shape filter_shape() const { return Shape{in_channels, filter_h, filter_w}; }
  ConvSpec spec() const { return ConvSpec{stride, padding}; }
};

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  ConvGeometry conv;  // meaningful for LayerKind::Conv only

  static LayerSpec make_conv(ConvGeometry g) { return LayerSpec{LayerKind::Conv, g}; }
  static LayerSpec relu() { return LayerSpec{LayerKind::Relu, {}}; }
  static LayerSpec maxpool2() { return LayerSpec{LayerKind::MaxPool2, {}}; }
};

// Feed-forward classifier. Fully-connected layers are convolutions whose
// kernel covers the whole incoming map, so the last layer ends at
// (classes, 1, 1). Loss is softmax cross-entropy.
struct NetSpec {
  Shape input;  // (c, h, w)
  std::vector<LayerSpec> layers;
  std::size_t classes = 0;

  // Shape after each layer; validates geometry and the (classes, 1, 1) tail.
  std::vector<Shape> layer_output_shapes() const;
  std::size_t conv_count() const;
  std::vector<ConvGeometry> conv_layers() const;
};

// conv3x3/2 -> relu -> conv3x3/2 -> relu -> fc, sized for `input`.
NetSpec toy_net(const Shape& input, std::size_t classes, std::size_t width1 = 8,
                std::size_t width2 = 16);

// Parameters of one conv layer: K filters (in_c, fh, fw) and K biases
// (all zero when the layer has no bias). Also used for gradients.
struct ConvParams {
  std::vector<Tensor> filters;
  std::vector<float> bias;
};
using ParamSet = std::vector<ConvParams>;

// What the forward pass actually convolves with at one conv layer.
struct ConvOperator {
  std::vector<TwoBitFilter> two_bit;  // empty -> run `approx` in full precision
  std::vector<Tensor> approx;         // alpha * codes, or raw weights for float layers
  std::vector<float> bias;
  bool has_bias = true;

  bool is_two_bit() const noexcept { return !two_bit.empty(); }
};

// Per-item activations kept for backprop: the input to every layer.
struct ForwardCache {
  std::vector<Tensor> layer_inputs;
};

struct ForwardResult {
  Tensor scores;  // (b, classes)
  std::vector<ForwardCache> caches;
};

// Runs the network over a (b, c, h, w) batch. Two-bit layers go through the
// multiplication-free engine, the rest through conv_reference.
ForwardResult network_forward(const NetSpec& net, std::span<const ConvOperator> ops,
                              const Tensor& inputs, bool keep_cache = true);

// Backprop of d(loss)/d(scores) into gradients w.r.t. each operator's
// `approx` filters and biases, summed over the batch.
ParamSet network_backward(const NetSpec& net, std::span<const ConvOperator> ops,
                          const std::vector<ForwardCache>& caches, const Tensor& score_grad);

struct LossResult {
  float loss = 0.0f;           // mean over the batch
  Tensor score_grad;           // (b, classes)
  std::size_t correct = 0;     // argmax hits
};

LossResult softmax_cross_entropy(const Tensor& scores, std::span<const int> labels);

std::size_t argmax(std::span<const float> v);

}  // namespace tbn

#include "tbn/network.hpp"

#include <algorithm>
#include <cmath>

#include "tbn/error.hpp"

namespace tbn {

std::vector<Shape> NetSpec::layer_output_shapes() const {
  if (input.rank() != 3) fail(ErrorCode::InvalidShape, "network input must be (c,h,w)");
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    switch (layer.kind) {
      case LayerKind::Conv: {
        const ConvGeometry& g = layer.conv;
        if (g.in_channels != cur[0])
          fail(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) + " expects " +
                                             std::to_string(g.in_channels) + " channels, gets " +
                                             cur.to_string());
        cur = Shape{g.out_channels, conv_output_extent(cur[1], g.filter_h, g.spec()),
                    conv_output_extent(cur[2], g.filter_w, g.spec())};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::MaxPool2:
        if (cur[1] < 2 || cur[2] < 2)
          fail(ErrorCode::ShapeMismatch, "maxpool on map smaller than 2x2 at layer " +
                                             std::to_string(i));
        cur = Shape{cur[0], cur[1] / 2, cur[2] / 2};
        break;
    }
    shapes.push_back(cur);
  }
  if (!(cur == Shape{classes, 1, 1}))
    fail(ErrorCode::ShapeMismatch, "network ends at " + cur.to_string() + ", expected (" +
                                       std::to_string(classes) + ",1,1)");
  return shapes;
}

std::size_t NetSpec::conv_count() const {
  return static_cast<std::size_t>(std::count_if(
      layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::Conv; }));
}

std::vector<ConvGeometry> NetSpec::conv_layers() const {
  std::vector<ConvGeometry> out;
  for (const auto& l : layers)
    if (l.kind == LayerKind::Conv) out.push_back(l.conv);
  return out;
}

NetSpec toy_net(const Shape& input, std::size_t classes, std::size_t width1, std::size_t width2) {
  NetSpec net;
  net.input = input;
  net.classes = classes;
  const ConvGeometry c1{input[0], width1, 3, 3, 2, 1, true};
  const std::size_t h1 = conv_output_extent(input[1], 3, c1.spec());
  const std::size_t w1 = conv_output_extent(input[2], 3, c1.spec());
  const ConvGeometry c2{width1, width2, 3, 3, 2, 1, true};
  const std::size_t h2 = conv_output_extent(h1, 3, c2.spec());
  const std::size_t w2 = conv_output_extent(w1, 3, c2.spec());
  const ConvGeometry fc{width2, classes, h2, w2, 1, 0, true};
  net.layers = {LayerSpec::make_conv(c1), LayerSpec::relu(), LayerSpec::make_conv(c2),
                LayerSpec::relu(), LayerSpec::make_conv(fc)};
  net.layer_output_shapes();
  return net;
}

namespace {

Tensor item(const Tensor& batch, std::size_t b) {
  const Shape s{batch.dim(1), batch.dim(2), batch.dim(3)};
  return Tensor(s, batch.values().subspan(b * s.element_count(), s.element_count()));
}

Tensor relu_forward(const Tensor& x) {
  std::vector<float> v(x.values().begin(), x.values().end());
  for (float& e : v) e = std::max(e, 0.0f);
  return Tensor(x.shape(), std::move(v));
}

Tensor maxpool2_forward(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  const auto in = x.values();
  std::vector<float> out(c * oh * ow);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t base = (ci * h + 2 * y) * w + 2 * xx;
        out[(ci * oh + y) * ow + xx] =
            std::max({in[base], in[base + 1], in[base + w], in[base + w + 1]});
      }
  return Tensor(Shape{c, oh, ow}, std::move(out));
}

std::optional<std::vector<float>> bias_of(const ConvOperator& op) {
  if (!op.has_bias) return std::nullopt;
  return op.bias;
}

void check_ops(const NetSpec& net, std::span<const ConvOperator> ops) {
  const auto convs = net.conv_layers();
  if (ops.size() != convs.size())
    fail(ErrorCode::ShapeMismatch, std::to_string(ops.size()) + " operators for " +
                                       std::to_string(convs.size()) + " conv layers");
  for (std::size_t j = 0; j < ops.size(); ++j) {
    if (ops[j].approx.size() != convs[j].out_channels)
      fail(ErrorCode::ShapeMismatch, "conv layer " + std::to_string(j) + " filter count");
    if (ops[j].has_bias && ops[j].bias.size() != convs[j].out_channels)
      fail(ErrorCode::ShapeMismatch, "conv layer " + std::to_string(j) + " bias length");
  }
}

}  // namespace

ForwardResult network_forward(const NetSpec& net, std::span<const ConvOperator> ops,
                              const Tensor& inputs, bool keep_cache) {
  net.layer_output_shapes();
  check_ops(net, ops);
  if (inputs.rank() != 4 || !(Shape{inputs.dim(1), inputs.dim(2), inputs.dim(3)} == net.input))
    fail(ErrorCode::ShapeMismatch, "batch shape " + inputs.shape().to_string() +
                                       " does not match network input " + net.input.to_string());
  const std::size_t batch = inputs.dim(0);
  ForwardResult result;
  std::vector<float> scores;
  scores.reserve(batch * net.classes);
  if (keep_cache) result.caches.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor x = item(inputs, b);
    std::size_t conv_index = 0;
    for (const LayerSpec& layer : net.layers) {
      if (keep_cache) result.caches[b].layer_inputs.push_back(x);
      switch (layer.kind) {
        case LayerKind::Conv: {
          const ConvOperator& op = ops[conv_index++];
          x = op.is_two_bit()
                  ? conv_layer_forward(x, op.two_bit, bias_of(op), layer.conv.spec())
                  : conv_layer_reference(x, op.approx, bias_of(op), layer.conv.spec());
          break;
        }
        case LayerKind::Relu:
          x = relu_forward(x);
          break;
        case LayerKind::MaxPool2:
          x = maxpool2_forward(x);
          break;
      }
    }
    scores.insert(scores.end(), x.values().begin(), x.values().end());
  }
  result.scores = Tensor(Shape{batch, net.classes}, std::move(scores));
  return result;
}

namespace {

struct ConvGradAccum {
  std::vector<std::vector<double>> filters;
  std::vector<double> bias;
};

// Accumulates dL/dW and dL/db for one item and returns dL/dx.
std::vector<double> conv_backward(const Tensor& x, const std::vector<Tensor>& filters,
                                  const std::vector<double>& gout, const ConvGeometry& g,
                                  ConvGradAccum& acc, bool need_dx) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t fh = g.filter_h, fw = g.filter_w;
  const std::size_t oh = conv_output_extent(h, fh, g.spec());
  const std::size_t ow = conv_output_extent(w, fw, g.spec());
  const auto in = x.values();
  std::vector<double> dx(need_dx ? x.size() : 0, 0.0);
  for (std::size_t k = 0; k < filters.size(); ++k) {
    const auto wk = filters[k].values();
    auto& dw = acc.filters[k];
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double go = gout[(k * oh + oy) * ow + ox];
        acc.bias[k] += go;
        if (go == 0.0) continue;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t ky = 0; ky < fh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < fw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t xi =
                  (ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
              const std::size_t wi = (ci * fh + ky) * fw + kx;
              dw[wi] += go * in[xi];
              if (need_dx) dx[xi] += go * wk[wi];
            }
          }
        }
      }
    }
  }
  return dx;
}

}  // namespace

ParamSet network_backward(const NetSpec& net, std::span<const ConvOperator> ops,
                          const std::vector<ForwardCache>& caches, const Tensor& score_grad) {
  check_ops(net, ops);
  const auto shapes = net.layer_output_shapes();
  const auto convs = net.conv_layers();
  if (score_grad.rank() != 2 || score_grad.dim(1) != net.classes ||
      score_grad.dim(0) != caches.size())
    fail(ErrorCode::CacheMismatch, "score gradient " + score_grad.shape().to_string() + " for " +
                                       std::to_string(caches.size()) + " cached items");

  std::vector<ConvGradAccum> acc(convs.size());
  for (std::size_t j = 0; j < convs.size(); ++j) {
    acc[j].filters.assign(convs[j].out_channels,
                          std::vector<double>(convs[j].filter_shape().element_count(), 0.0));
    acc[j].bias.assign(convs[j].out_channels, 0.0);
  }

  for (std::size_t b = 0; b < caches.size(); ++b) {
    const ForwardCache& cache = caches[b];
    if (cache.layer_inputs.size() != net.layers.size())
      fail(ErrorCode::CacheMismatch, "cache for item " + std::to_string(b) + " has " +
                                         std::to_string(cache.layer_inputs.size()) +
                                         " entries, network has " +
                                         std::to_string(net.layers.size()) + " layers");
    std::vector<double> g(net.classes);
    for (std::size_t k = 0; k < net.classes; ++k) g[k] = score_grad[b * net.classes + k];
    std::size_t conv_index = convs.size();
    for (std::size_t i = net.layers.size(); i-- > 0;) {
      const Tensor& x = cache.layer_inputs[i];
      const Shape& expected_in = i == 0 ? net.input : shapes[i - 1];
      if (!(x.shape() == expected_in))
        fail(ErrorCode::CacheMismatch, "cached input of layer " + std::to_string(i) + " is " +
                                           x.shape().to_string());
      switch (net.layers[i].kind) {
        case LayerKind::Conv: {
          --conv_index;
          g = conv_backward(x, ops[conv_index].approx, g, convs[conv_index], acc[conv_index],
                            i > 0);
          break;
        }
        case LayerKind::Relu: {
          const auto in = x.values();
          for (std::size_t e = 0; e < g.size(); ++e)
            if (!(in[e] > 0.0f)) g[e] = 0.0;
          break;
        }
        case LayerKind::MaxPool2: {
          const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
          const std::size_t oh = h / 2, ow = w / 2;
          const auto in = x.values();
          std::vector<double> dx(x.size(), 0.0);
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t y = 0; y < oh; ++y)
              for (std::size_t xx = 0; xx < ow; ++xx) {
                const std::size_t base = (ci * h + 2 * y) * w + 2 * xx;
                const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
                std::size_t best = cand[0];
                for (std::size_t q : cand)
                  if (in[q] > in[best]) best = q;
                dx[best] += g[(ci * oh + y) * ow + xx];
              }
          g = std::move(dx);
          break;
        }
      }
    }
  }

  ParamSet grads(convs.size());
  for (std::size_t j = 0; j < convs.size(); ++j) {
    const Shape fs = convs[j].filter_shape();
    for (const auto& dw : acc[j].filters) {
      std::vector<float> v(dw.begin(), dw.end());
      grads[j].filters.emplace_back(fs, std::move(v));
    }
    grads[j].bias.assign(acc[j].bias.begin(), acc[j].bias.end());
    if (!ops[j].has_bias) std::fill(grads[j].bias.begin(), grads[j].bias.end(), 0.0f);
  }
  return grads;
}

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

LossResult softmax_cross_entropy(const Tensor& scores, std::span<const int> labels) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size())
    fail(ErrorCode::ShapeMismatch, "scores " + scores.shape().to_string() + " for " +
                                       std::to_string(labels.size()) + " labels");
  const std::size_t batch = scores.dim(0), classes = scores.dim(1);
  LossResult r;
  std::vector<float> grad(batch * classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto row = scores.values().subspan(b * classes, classes);
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      fail(ErrorCode::ShapeMismatch, "label " + std::to_string(y) + " outside class range");
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float s : row) z += std::exp(static_cast<double>(s) - peak);
    const double log_z = std::log(z) + peak;
    total += log_z - row[static_cast<std::size_t>(y)];
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(static_cast<double>(row[k]) - log_z);
      grad[b * classes + k] =
          static_cast<float>((p - (static_cast<std::size_t>(y) == k ? 1.0 : 0.0)) /
                             static_cast<double>(batch));
    }
    if (argmax(row) == static_cast<std::size_t>(y)) ++r.correct;
  }
  r.loss = static_cast<float>(total / static_cast<double>(batch));
  r.score_grad = Tensor(Shape{batch, classes}, std::move(grad));
  return r;
}

}  // namespace tbn

#include "tbn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "tbn/error.hpp"

namespace tbn {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0f)) fail(ErrorCode::InvalidShape, "learning rate must be >= 0");
  if (!(momentum >= 0.0f && momentum < 1.0f))
    fail(ErrorCode::InvalidShape, "momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0f)) fail(ErrorCode::InvalidShape, "weight decay must be >= 0");
  if (batch_size == 0) fail(ErrorCode::InvalidShape, "batch size must be positive");
  if (!(lr_divisor > 0.0f)) fail(ErrorCode::InvalidShape, "lr divisor must be positive");
  for (std::size_t i = 1; i < lr_drop_epochs.size(); ++i)
    if (lr_drop_epochs[i] <= lr_drop_epochs[i - 1])
      fail(ErrorCode::InvalidShape, "lr drop epochs must be strictly increasing");
}

TrainConfig desk_scale_config(std::size_t epochs, std::uint64_t seed) {
  TrainConfig c;
  c.batch_size = 32;
  c.epochs = epochs;
  c.seed = seed;
  c.lr_drop_epochs.clear();
  for (std::size_t full_run_epoch : {30, 40, 50}) {
    const std::size_t e = (full_run_epoch * epochs + 29) / 58;
    if (e > 0 && (c.lr_drop_epochs.empty() || e > c.lr_drop_epochs.back()))
      c.lr_drop_epochs.push_back(e);
  }
  return c;
}

TrainState init_train_state(const NetSpec& net, const TrainConfig& config) {
  config.validate();
  net.layer_output_shapes();
  std::mt19937_64 rng(config.seed);
  TrainState state;
  state.net = net;
  for (const ConvGeometry& g : net.conv_layers()) {
    const Shape fs = g.filter_shape();
    const double stddev = std::sqrt(2.0 / static_cast<double>(fs.element_count()));
    std::normal_distribution<double> normal(0.0, stddev);
    ConvParams p, v;
    for (std::size_t k = 0; k < g.out_channels; ++k) {
      std::vector<float> w(fs.element_count());
      for (float& e : w) {
        double s;
        do s = normal(rng);
        while (std::fabs(s) > 1.5);
        e = static_cast<float>(s);
      }
      p.filters.emplace_back(fs, std::move(w));
      v.filters.push_back(Tensor::zeros(fs));
    }
    p.bias.assign(g.out_channels, 0.0f);
    v.bias.assign(g.out_channels, 0.0f);
    state.shadow.push_back(std::move(p));
    state.velocity.push_back(std::move(v));
  }
  state.eta = schedule_lr(0, config);
  return state;
}

std::vector<ConvOperator> approximate_all_filters(const TrainState& state,
                                                  const TrainConfig& config) {
  const auto convs = state.net.conv_layers();
  if (convs.size() != state.shadow.size())
    fail(ErrorCode::ShapeMismatch, "state holds parameters for " +
                                       std::to_string(state.shadow.size()) + " conv layers, net has " +
                                       std::to_string(convs.size()));
  std::vector<ConvOperator> ops(convs.size());
  for (std::size_t j = 0; j < convs.size(); ++j) {
    const ConvParams& p = state.shadow[j];
    ConvOperator& op = ops[j];
    op.bias = p.bias;
    op.has_bias = convs[j].bias;
    const bool full_precision =
        !config.two_bit ||
        (config.keep_first_last_float && (j == 0 || j + 1 == convs.size()));
    if (full_precision) {
      op.approx = p.filters;
      continue;
    }
    op.two_bit.reserve(p.filters.size());
    op.approx.reserve(p.filters.size());
    for (const Tensor& w : p.filters) {
      auto [filter, report] = quantize_filter(w);
      op.approx.push_back(filter.approximate());
      op.two_bit.push_back(std::move(filter));
    }
  }
  return ops;
}

ForwardResult two_bit_forward(const TrainState& state, std::span<const ConvOperator> ops,
                              const Tensor& inputs) {
  return network_forward(state.net, ops, inputs, true);
}

ParamSet two_bit_backward(const TrainState& state, std::span<const ConvOperator> ops,
                          const std::vector<ForwardCache>& caches, const Tensor& score_grad) {
  return network_backward(state.net, ops, caches, score_grad);
}

namespace {

std::vector<float> sgd_step(std::span<const float> w, std::span<const float> g,
                            std::vector<float>& v, float eta, const TrainConfig& config,
                            bool clip) {
  std::vector<float> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = config.momentum * v[i] + g[i] + config.weight_decay * w[i];
    float next = w[i] - eta * v[i];
    if (clip) next = std::clamp(next, -config.clip_bound, config.clip_bound);
    out[i] = next;
  }
  return out;
}

}  // namespace

TrainState update_parameters(const TrainState& state, const ParamSet& grads,
                             const TrainConfig& config) {
  if (grads.size() != state.shadow.size())
    fail(ErrorCode::ShapeMismatch, "gradient layer count differs from parameters");
  TrainState next = state;
  for (std::size_t j = 0; j < grads.size(); ++j) {
    const ConvParams& w = state.shadow[j];
    const ConvParams& g = grads[j];
    ConvParams& v = next.velocity[j];
    if (g.filters.size() != w.filters.size() || g.bias.size() != w.bias.size())
      fail(ErrorCode::ShapeMismatch, "gradient shape differs at conv layer " + std::to_string(j));
    for (std::size_t k = 0; k < w.filters.size(); ++k) {
      if (!(g.filters[k].shape() == w.filters[k].shape()))
        fail(ErrorCode::ShapeMismatch, "gradient filter shape differs at conv layer " +
                                           std::to_string(j));
      std::vector<float> vel(v.filters[k].values().begin(), v.filters[k].values().end());
      std::vector<float> updated =
          sgd_step(w.filters[k].values(), g.filters[k].values(), vel, state.eta, config, config.clip);
      next.shadow[j].filters[k] = Tensor(w.filters[k].shape(), std::move(updated));
      v.filters[k] = Tensor(w.filters[k].shape(), std::move(vel));
    }
    next.shadow[j].bias = sgd_step(w.bias, g.bias, v.bias, state.eta, config, false);
  }
  return next;
}

float schedule_lr(std::size_t epoch, const TrainConfig& config) {
  const auto drops = std::count_if(config.lr_drop_epochs.begin(), config.lr_drop_epochs.end(),
                                   [epoch](std::size_t e) { return e <= epoch; });
  double lr = config.learning_rate;
  for (long i = 0; i < drops; ++i) lr /= config.lr_divisor;
  return static_cast<float>(lr);
}

MinibatchResult train_minibatch(const TrainState& state, const Batch& batch,
                                const TrainConfig& config) {
  const auto ops = approximate_all_filters(state, config);
  const ForwardResult fwd = two_bit_forward(state, ops, batch.inputs);
  const LossResult loss = softmax_cross_entropy(fwd.scores, batch.labels);
  const ParamSet grads = two_bit_backward(state, ops, fwd.caches, loss.score_grad);
  MinibatchResult out{update_parameters(state, grads, config), loss.loss, loss.correct};
  ++out.state.iteration;
  out.state.eta = schedule_lr(out.state.epoch, config);
  return out;
}

std::string format_record(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%zu iter=%zu lr=%.6g loss=%.6f train_acc=%.4f", r.epoch,
                r.iteration, static_cast<double>(r.lr), static_cast<double>(r.loss),
                static_cast<double>(r.train_acc));
  return buf;
}

TrainState train_epoch(TrainState state, const Dataset& data, const TrainConfig& config,
                       EpochRecord* record) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed ^ (0x9E3779B97F4A7C15ull * (state.epoch + 1)));
  std::shuffle(order.begin(), order.end(), rng);

  const float lr = state.eta;
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    const Batch batch = data.gather(std::span<const std::size_t>(order).subspan(start, stop - start));
    MinibatchResult r = train_minibatch(state, batch, config);
    state = std::move(r.state);
    loss_sum += r.loss;
    ++batches;
  }
  ++state.epoch;
  state.eta = schedule_lr(state.epoch, config);
  if (record) {
    record->epoch = state.epoch;
    record->iteration = state.iteration;
    record->lr = lr;
    record->loss = batches ? static_cast<float>(loss_sum / static_cast<double>(batches)) : 0.0f;
    record->train_acc = evaluate_accuracy(state, data, config);
  }
  return state;
}

TrainState train(const NetSpec& net, const Dataset& data, const TrainConfig& config,
                 const std::function<void(const EpochRecord&)>& on_epoch) {
  TrainState state = init_train_state(net, config);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochRecord record;
    state = train_epoch(std::move(state), data, config, &record);
    if (on_epoch) on_epoch(record);
  }
  return state;
}

float evaluate_accuracy(const TrainState& state, const Dataset& data, const TrainConfig& config) {
  if (data.size() == 0) return 0.0f;
  const auto ops = approximate_all_filters(state, config);
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t stop = std::min(data.size(), start + kChunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = data.gather(idx);
    const ForwardResult fwd = network_forward(state.net, ops, batch.inputs, false);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = fwd.scores.values().subspan(b * state.net.classes, state.net.classes);
      if (argmax(row) == static_cast<std::size_t>(batch.labels[b])) ++correct;
    }
  }
  return static_cast<float>(correct) / static_cast<float>(data.size());
}

TbnModel export_inference_model(const TrainState& state) {
  const NetSpec& net = state.net;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerKind want = i % 2 == 0 ? LayerKind::Conv : LayerKind::Relu;
    if (net.layers[i].kind != want || (net.layers.size() % 2 == 0))
      fail(ErrorCode::InvalidShape, "export needs a conv/relu chain ending in conv");
  }
  const auto convs = net.conv_layers();
  TbnModel model;
  for (std::size_t j = 0; j < convs.size(); ++j) {
    const ConvGeometry& g = convs[j];
    const LayerMeta meta{static_cast<std::uint32_t>(g.in_channels),
                         static_cast<std::uint32_t>(g.out_channels),
                         static_cast<std::uint32_t>(g.filter_h),
                         static_cast<std::uint32_t>(g.filter_w),
                         static_cast<std::uint32_t>(g.stride),
                         static_cast<std::uint32_t>(g.padding)};
    std::vector<TwoBitFilter> filters;
    for (const Tensor& w : state.shadow[j].filters) filters.push_back(quantize_filter(w).first);
    std::optional<std::vector<float>> bias;
    if (g.bias) bias = state.shadow[j].bias;
    model.layers.push_back(make_layer(meta, filters, std::move(bias)));
  }
  return model;
}

}  // namespace tbn

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tbn/dataset.hpp"
#include "tbn/network.hpp"
#include "tbn/packed.hpp"

namespace tbn {

struct TrainConfig {
  float learning_rate = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  std::size_t batch_size = 256;
  std::vector<std::size_t> lr_drop_epochs{30, 40, 50};
  float lr_divisor = 10.0f;
  std::size_t epochs = 58;
  std::uint64_t seed = 0;

  // Shadow weights are clamped to [-clip_bound, clip_bound] after each step.
  bool clip = true;
  float clip_bound = 2.05f;
  // Train the first and last conv layers with their real-valued weights.
  bool keep_first_last_float = false;
  // false trains the same network in full precision (the float baseline).
  bool two_bit = true;

  // Throws InvalidShape when a field is out of range.
  void validate() const;
};

// Desk-scale run of the defaults above: batch 32, the drop epochs scaled
// from 30/40/50 of 58 down to `epochs`.
TrainConfig desk_scale_config(std::size_t epochs = 20, std::uint64_t seed = 1);

inline constexpr std::size_t kDemoClasses = 8;
inline constexpr std::size_t kDemoSamples = 1024;

struct TrainState {
  NetSpec net;
  ParamSet shadow;    // real-valued filters W and biases
  ParamSet velocity;  // momentum buffers, same layout
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  float eta = 0.1f;
};

// He-normal filters truncated to [-1.5, 1.5], zero biases, zero velocity.
TrainState init_train_state(const NetSpec& net, const TrainConfig& config);

// Per conv layer: codes, alpha and alpha * codes for every filter. Layers
// left in full precision by the config carry their raw weights only.
std::vector<ConvOperator> approximate_all_filters(const TrainState& state,
                                                  const TrainConfig& config = {});

ForwardResult two_bit_forward(const TrainState& state, std::span<const ConvOperator> ops,
                              const Tensor& inputs);

ParamSet two_bit_backward(const TrainState& state, std::span<const ConvOperator> ops,
                          const std::vector<ForwardCache>& caches, const Tensor& score_grad);

// v <- mu v + g + lambda W;  W <- W - eta v;  W clamped when config.clip.
// The gradient w.r.t. the approximate filters is applied to the shadow
// weights unchanged.
TrainState update_parameters(const TrainState& state, const ParamSet& grads,
                             const TrainConfig& config);

// base_lr / divisor^(number of drop epochs <= epoch).
float schedule_lr(std::size_t epoch, const TrainConfig& config);

struct MinibatchResult {
  TrainState state;
  float loss = 0.0f;
  std::size_t correct = 0;
};

// One iteration: quantize, forward, loss, backward, update, reschedule.
MinibatchResult train_minibatch(const TrainState& state, const Batch& batch,
                                const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  std::size_t iteration = 0;
  float lr = 0.0f;        // learning rate used during the epoch
  float loss = 0.0f;      // mean minibatch loss
  float train_acc = 0.0f; // accuracy of the quantized network after the epoch
};

std::string format_record(const EpochRecord& r);

// Shuffles with a generator seeded from (config.seed, epoch), runs every
// minibatch, then advances the epoch counter and learning rate.
TrainState train_epoch(TrainState state, const Dataset& data, const TrainConfig& config,
                       EpochRecord* record = nullptr);

TrainState train(const NetSpec& net, const Dataset& data, const TrainConfig& config,
                 const std::function<void(const EpochRecord&)>& on_epoch = {});

// Fraction of `data` the network classifies correctly, using the same
// operators training would use.
float evaluate_accuracy(const TrainState& state, const Dataset& data, const TrainConfig& config);

// Final quantization of every conv layer into a TBN1 model. The network
// must be a chain of conv layers joined by single ReLUs.
TbnModel export_inference_model(const TrainState& state);

}  // namespace tbn

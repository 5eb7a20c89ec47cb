#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tbn/tensor.hpp"

namespace tbn {

struct Batch {
  Tensor inputs;            // (b, c, h, w)
  std::vector<int> labels;  // b entries in [0, classes)
};

struct Dataset {
  Tensor images;  // (n, c, h, w)
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape item_shape() const { return Shape{images.dim(1), images.dim(2), images.dim(3)}; }
  Batch gather(std::span<const std::size_t> indices) const;
};

inline constexpr float kSynthNoiseSigma = 0.25f;
inline constexpr std::size_t kSynthSide = 16;

// Class-conditional Gaussian blobs on a 1x16x16 canvas. Class k is a blob
// centred on a ring at angle 2*pi*k/classes; sigma scales both the per-image
// jitter of the centre and the additive pixel noise, so sigma = 0 renders
// every image of a class identically.
Dataset make_synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes,
                           float sigma = kSynthNoiseSigma);

// IDX (MNIST) ingestion. Images are scaled to [0, 1] and shaped (n, 1, rows, cols).
Tensor load_idx_images(std::span<const std::uint8_t> bytes);
std::vector<int> load_idx_labels(std::span<const std::uint8_t> bytes);

// Reads train-images-idx3-ubyte / train-labels-idx1-ubyte from `dir`,
// keeping at most `limit` items (0 keeps all).
Dataset load_mnist(const std::string& dir, std::size_t limit = 0);

}  // namespace tbn

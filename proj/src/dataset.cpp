#include "tbn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tbn/bytes.hpp"
#include "tbn/error.hpp"

namespace tbn {

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  const Shape item = item_shape();
  const std::size_t stride = item.element_count();
  std::vector<float> values;
  values.reserve(indices.size() * stride);
  std::vector<int> out_labels;
  out_labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) fail(ErrorCode::IndexOutOfBounds, "dataset index " + std::to_string(i));
    auto src = images.values().subspan(i * stride, stride);
    values.insert(values.end(), src.begin(), src.end());
    out_labels.push_back(labels[i]);
  }
  return Batch{Tensor(Shape{indices.size(), item[0], item[1], item[2]}, std::move(values)),
               std::move(out_labels)};
}

Dataset make_synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes, float sigma) {
  if (n == 0 || classes == 0)
    fail(ErrorCode::InvalidShape, "synthetic dataset needs n >= 1 and classes >= 1");
  constexpr double kRing = 4.5;
  constexpr double kBlobRadius = 2.0;
  constexpr double kJitter = 2.0;  // centre jitter in pixels per unit sigma
  const double mid = (kSynthSide - 1) / 2.0;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);

  std::vector<float> pixels;
  pixels.reserve(n * kSynthSide * kSynthSide);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = classes == 1 ? 0 : (i < classes ? i : pick(rng));
    labels[i] = static_cast<int>(k);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(classes);
    const double cy = mid + kRing * std::sin(angle) + sigma * kJitter * normal(rng);
    const double cx = mid + kRing * std::cos(angle) + sigma * kJitter * normal(rng);
    for (std::size_t y = 0; y < kSynthSide; ++y) {
      for (std::size_t x = 0; x < kSynthSide; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double blob = std::exp(-(dy * dy + dx * dx) / (2.0 * kBlobRadius * kBlobRadius));
        pixels.push_back(static_cast<float>(blob + sigma * normal(rng)));
      }
    }
  }
  return Dataset{Tensor(Shape{n, 1, kSynthSide, kSynthSide}, std::move(pixels)),
                 std::move(labels), classes};
}

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

}  // namespace

Tensor load_idx_images(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::TruncatedInput);
  if (bytes.size() < 4 || r.u32_be() != kIdxImages)
    fail(ErrorCode::BadIdxMagic, "expected IDX image magic 0x00000803");
  const std::uint32_t n = r.u32_be(), rows = r.u32_be(), cols = r.u32_be();
  Shape shape{n, 1, rows, cols};
  if (shape.element_count() > r.remaining())
    fail(ErrorCode::TruncatedInput, "IDX image payload shorter than header claims");
  auto raw = r.take(shape.element_count());
  std::vector<float> v(raw.size());
  std::transform(raw.begin(), raw.end(), v.begin(),
                 [](std::uint8_t p) { return static_cast<float>(p) / 255.0f; });
  return Tensor(std::move(shape), std::move(v));
}

std::vector<int> load_idx_labels(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::TruncatedInput);
  if (bytes.size() < 4 || r.u32_be() != kIdxLabels)
    fail(ErrorCode::BadIdxMagic, "expected IDX label magic 0x00000801");
  const std::uint32_t n = r.u32_be();
  auto raw = r.take(n);
  return std::vector<int>(raw.begin(), raw.end());
}

Dataset load_mnist(const std::string& dir, std::size_t limit) {
  Tensor images = load_idx_images(read_file_bytes(dir + "/train-images-idx3-ubyte"));
  std::vector<int> labels = load_idx_labels(read_file_bytes(dir + "/train-labels-idx1-ubyte"));
  if (labels.size() != images.dim(0))
    fail(ErrorCode::ShapeMismatch, "image and label counts differ");
  const std::size_t keep = limit == 0 ? labels.size() : std::min(limit, labels.size());
  const std::size_t classes =
      static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  if (keep < labels.size()) {
    const std::size_t stride = images.dim(2) * images.dim(3);
    images = Tensor(Shape{keep, 1, images.dim(2), images.dim(3)},
                    images.values().first(keep * stride));
    labels.resize(keep);
  }
  return Dataset{std::move(images), std::move(labels), classes};
}

}  // namespace tbn

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tbn/tensor.hpp"

namespace tbn {

// One two-bit weight; the alphabet is {-2, -1, 1, 2}.
using Code = std::int8_t;
using CodeArray = std::vector<Code>;

constexpr bool is_valid_code(int c) noexcept { return c == -2 || c == -1 || c == 1 || c == 2; }

// Substituted for a zero optimal scale so alpha stays strictly positive.
inline constexpr float kDegenerateAlpha = 1e-12f;

struct TwoBitFilter {
  Shape shape;  // (c, fh, fw)
  CodeArray codes;
  float alpha = 1.0f;

  // alpha * codes as a real-valued tensor of `shape`.
  Tensor approximate() const;
};

struct QuantReport {
  float alpha_star = 0.0f;
  double error_j = 0.0;
  std::size_t b1_count = 0;  // |W_i| <= 1
  std::size_t b2_count = 0;  // |W_i| > 1
  bool degenerate = false;   // alpha_star was clamped to kDegenerateAlpha
};

// Deterministic threshold map: w < -1 -> -2, [-1, 0] -> -1, (0, 1] -> 1,
// w > 1 -> 2. The intervals are closed exactly as written, so 0 maps to -1.
Code discretize_value(float w) noexcept;
CodeArray discretize(std::span<const float> w);
inline CodeArray discretize(const Tensor& w) { return discretize(w.values()); }

// Minimiser of ||W - alpha * discretize(W)||^2 over alpha:
//   (sum_{B1} |W_i| + 2 sum_{B2} |W_i|) / (|B1| + 4 |B2|)
// Sums are accumulated in long double; the result is rounded to binary32.
// Returns 0 for an all-zero filter (the caller decides how to clamp).
float optimal_alpha(std::span<const float> w);
inline float optimal_alpha(const Tensor& w) { return optimal_alpha(w.values()); }

// ||W - alpha * codes||^2 evaluated directly.
double quantization_error(std::span<const float> w, double alpha, std::span<const Code> codes);
inline double quantization_error(const Tensor& w, double alpha, std::span<const Code> codes) {
  return quantization_error(w.values(), alpha, codes);
}

// The same objective as the expanded quadratic in alpha, valid only when the
// codes are discretize(w):
//   (|B1| + 4|B2|) alpha^2 - 2 (sum_{B1}|W_i| + 2 sum_{B2}|W_i|) alpha + sum W_i^2
double quantization_error_expanded(std::span<const float> w, double alpha);

struct Partition {
  std::size_t b1 = 0;
  std::size_t b2 = 0;
};
Partition partition(std::span<const float> w) noexcept;

// Two-step minimiser: codes from discretize(), then the closed-form alpha.
// An all-zero filter gets alpha = kDegenerateAlpha and report.degenerate.
std::pair<TwoBitFilter, QuantReport> quantize_filter(const Tensor& w);

}  // namespace tbn

#include "tbn/quantizer.hpp"

#include <cmath>

#include "tbn/error.hpp"

namespace tbn {

Tensor TwoBitFilter::approximate() const {
  std::vector<float> v(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) v[i] = alpha * static_cast<float>(codes[i]);
  return Tensor(shape, std::move(v));
}

Code discretize_value(float w) noexcept {
  if (w < -1.0f) return -2;
  if (w <= 0.0f) return -1;
  if (w <= 1.0f) return 1;
  return 2;
}

CodeArray discretize(std::span<const float> w) {
  CodeArray codes(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) codes[i] = discretize_value(w[i]);
  return codes;
}

Partition partition(std::span<const float> w) noexcept {
  Partition p;
  for (float v : w) {
    if (std::fabs(v) <= 1.0f)
      ++p.b1;
    else
      ++p.b2;
  }
  return p;
}

namespace {

struct Moments {
  long double weighted_abs = 0;  // sum_{B1}|W| + 2 sum_{B2}|W|
  long double sum_sq = 0;
  std::size_t b1 = 0;
  std::size_t b2 = 0;
};

Moments moments(std::span<const float> w) {
  Moments m;
  for (float v : w) {
    const long double a = std::fabs(static_cast<long double>(v));
    m.sum_sq += a * a;
    if (a <= 1) {
      m.weighted_abs += a;
      ++m.b1;
    } else {
      m.weighted_abs += 2 * a;
      ++m.b2;
    }
  }
  return m;
}

}  // namespace

float optimal_alpha(std::span<const float> w) {
  if (w.empty()) fail(ErrorCode::EmptyFilter, "filter has no elements");
  const Moments m = moments(w);
  const long double denom = static_cast<long double>(m.b1) + 4.0L * static_cast<long double>(m.b2);
  return static_cast<float>(m.weighted_abs / denom);
}

double quantization_error(std::span<const float> w, double alpha, std::span<const Code> codes) {
  if (w.size() != codes.size())
    fail(ErrorCode::LengthMismatch, std::to_string(w.size()) + " weights vs " +
                                        std::to_string(codes.size()) + " codes");
  long double acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const long double d = static_cast<long double>(w[i]) - alpha * static_cast<long double>(codes[i]);
    acc += d * d;
  }
  return static_cast<double>(acc);
}

double quantization_error_expanded(std::span<const float> w, double alpha) {
  const Moments m = moments(w);
  const long double a = alpha;
  const long double quad = static_cast<long double>(m.b1) + 4.0L * static_cast<long double>(m.b2);
  return static_cast<double>(quad * a * a - 2 * m.weighted_abs * a + m.sum_sq);
}

std::pair<TwoBitFilter, QuantReport> quantize_filter(const Tensor& w) {
  if (w.size() == 0) fail(ErrorCode::EmptyFilter, "filter has no elements");
  TwoBitFilter filter{w.shape(), discretize(w), optimal_alpha(w)};
  QuantReport report;
  if (!(filter.alpha > 0.0f)) {
    filter.alpha = kDegenerateAlpha;
    report.degenerate = true;
  }
  const Partition p = partition(w.values());
  report.alpha_star = filter.alpha;
  report.b1_count = p.b1;
  report.b2_count = p.b2;
  report.error_j = quantization_error(w, filter.alpha, filter.codes);
  return {std::move(filter), report};
}

}  // namespace tbn

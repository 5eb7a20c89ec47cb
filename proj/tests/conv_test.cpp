#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tbn/conv.hpp"
#include "tbn/error.hpp"

using namespace tbn;

namespace {

Tensor random_tensor(std::mt19937& rng, Shape shape, float lo = -1, float hi = 1) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(shape.element_count());
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

TwoBitFilter random_filter(std::mt19937& rng, Shape shape) {
  static constexpr Code kAlphabet[4] = {-2, -1, 1, 2};
  std::uniform_int_distribution<int> pick(0, 3);
  std::uniform_real_distribution<float> alpha(0.05f, 2.0f);
  CodeArray c(shape.element_count());
  for (auto& v : c) v = kAlphabet[pick(rng)];
  return TwoBitFilter{std::move(shape), std::move(c), alpha(rng)};
}

double max_rel_error(const Tensor& got, const Tensor& want) {
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(got[i]) - want[i]) /
                                std::max(1.0, std::fabs(static_cast<double>(want[i]))));
  return worst;
}

const Tensor kInput2x2(Shape{1, 2, 2}, {1, 2, 3, 4});

}  // namespace

TEST(ConvReferenceTest, HandComputedWindow) {
  const Tensor filter(Shape{1, 2, 2}, {0.5f, -0.5f, 1.0f, -1.0f});
  const Tensor out = conv_reference(kInput2x2, filter, {});
  ASSERT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_FLOAT_EQ(out[0], -1.5f);
}

TEST(ConvReferenceTest, ZeroFilterAndIdentity) {
  std::mt19937 rng(1);
  const Tensor x = random_tensor(rng, Shape{2, 5, 5});
  const Tensor zero = conv_reference(x, Tensor::zeros(Shape{2, 3, 3}), {1, 1});
  for (float v : zero.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(conv_reference(Tensor(Shape{1, 1, 1}, {3}), Tensor(Shape{1, 1, 1}, {1}), {})[0], 3.0f);
}

TEST(ConvReferenceTest, StridePaddingGeometry) {
  const Tensor x(Shape{1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor ones(Shape{1, 3, 3}, {1, 1, 1, 1, 1, 1, 1, 1, 1});
  const Tensor out = conv_reference(x, ones, {2, 1});
  ASSERT_EQ(out.shape(), (Shape{2, 2}));
  // Windows centred on the corners of the zero-padded input.
  EXPECT_FLOAT_EQ(out.at({0, 0}), 1 + 2 + 4 + 5);
  EXPECT_FLOAT_EQ(out.at({0, 1}), 2 + 3 + 5 + 6);
  EXPECT_FLOAT_EQ(out.at({1, 0}), 4 + 5 + 7 + 8);
  EXPECT_FLOAT_EQ(out.at({1, 1}), 5 + 6 + 8 + 9);
}

TEST(ConvReferenceTest, ShapeErrors) {
  EXPECT_THROW(conv_reference(kInput2x2, Tensor::zeros(Shape{2, 1, 1}), {}), Error);
  EXPECT_THROW(conv_reference(kInput2x2, Tensor::zeros(Shape{1, 3, 3}), {}), Error);
  EXPECT_THROW(conv_reference(kInput2x2, Tensor::zeros(Shape{1, 1, 1}), {0, 0}), Error);
}

TEST(ConvMfreeTest, HandComputedWindow) {
  const TwoBitFilter f{Shape{1, 2, 2}, CodeArray{1, -1, 2, -2}, 0.5f};
  const Tensor out = conv_mfree(kInput2x2, f, {});
  EXPECT_FLOAT_EQ(out[0], -1.5f);
  EXPECT_FLOAT_EQ(conv_reference(kInput2x2, f.approximate(), {})[0], -1.5f);
}

TEST(ConvMfreeTest, AllPlusOneIsSumPool) {
  std::mt19937 rng(2);
  const Tensor x = random_tensor(rng, Shape{2, 6, 6});
  const TwoBitFilter f{Shape{2, 2, 2}, CodeArray(8, 1), 1.0f};
  const Tensor out = conv_mfree(x, f, {2, 0});
  for (std::size_t oy = 0; oy < 3; ++oy)
    for (std::size_t ox = 0; ox < 3; ++ox) {
      double s = 0;
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) s += x.at({c, 2 * oy + dy, 2 * ox + dx});
      EXPECT_NEAR(out.at({oy, ox}), s, 1e-5);
    }
}

TEST(ConvMfreeTest, NegatedCodesNegateOutput) {
  std::mt19937 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Tensor x = random_tensor(rng, Shape{3, 7, 7});
    TwoBitFilter f = random_filter(rng, Shape{3, 3, 3});
    TwoBitFilter g = f;
    for (auto& c : g.codes) c = static_cast<Code>(-c);
    const Tensor a = conv_mfree(x, f, {1, 1}), b = conv_mfree(x, g, {1, 1});
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], -b[i]);
  }
}

TEST(ConvMfreeTest, MatchesReferenceOnRandomInstances) {
  std::mt19937 rng(4);
  std::uniform_int_distribution<std::size_t> c_dist(1, 4), hw(1, 12), k_idx(0, 2), s_dist(1, 2),
      p_dist(0, 1);
  const std::size_t ks[3] = {1, 3, 5};
  int run = 0;
  while (run < 200) {
    const std::size_t c = c_dist(rng), h = hw(rng), w = hw(rng);
    const std::size_t fh = ks[k_idx(rng)], fw = ks[k_idx(rng)];
    const ConvSpec spec{s_dist(rng), p_dist(rng)};
    if (h + 2 * spec.padding < fh || w + 2 * spec.padding < fw) continue;
    const Tensor x = random_tensor(rng, Shape{c, h, w});
    const TwoBitFilter f = random_filter(rng, Shape{c, fh, fw});
    ASSERT_LE(max_rel_error(conv_mfree(x, f, spec), conv_reference(x, f.approximate(), spec)),
              1e-4);
    ++run;
  }
}

TEST(ConvMfreeTest, PackedPathMatchesUnpacked) {
  std::mt19937 rng(5);
  for (int t = 0; t < 50; ++t) {
    const Tensor x = random_tensor(rng, Shape{2, 9, 9});
    const TwoBitFilter f = random_filter(rng, Shape{2, 3, 3});
    const PackedFilter p{f.alpha, pack_codes(f.codes)};
    ASSERT_EQ(conv_mfree(x, p, f.shape, {2, 1}), conv_mfree(x, f, {2, 1}));
  }
}

TEST(ConvMfreeTest, MultiplyCountEqualsOutputElements) {
  std::mt19937 rng(6);
  const Tensor x = random_tensor(rng, Shape{3, 10, 8});
  const TwoBitFilter f = random_filter(rng, Shape{3, 3, 3});
  auto [out, multiplies] = conv_mfree_counted(x, f, {1, 1});
  EXPECT_EQ(multiplies, out.size());
  EXPECT_EQ(out, conv_mfree(x, f, {1, 1}));
}

TEST(ConvMfreeTest, ScalingPlacementEquivalence) {
  // (alpha * I) accumulated with unit-scale codes vs codes accumulated then scaled.
  std::mt19937 rng(7);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = random_tensor(rng, Shape{2, 6, 6});
    TwoBitFilter f = random_filter(rng, Shape{2, 3, 3});
    std::vector<float> scaled(x.values().begin(), x.values().end());
    for (float& v : scaled) v *= f.alpha;
    TwoBitFilter unit = f;
    unit.alpha = 1.0f;
    const Tensor pre = conv_mfree(Tensor(x.shape(), std::move(scaled)), unit, {1, 0});
    const Tensor post = conv_mfree(x, f, {1, 0});
    ASSERT_LE(max_rel_error(pre, post), 1e-4);
  }
}

TEST(ConvMfreeTest, Linearity) {
  std::mt19937 rng(8);
  std::uniform_real_distribution<float> a_dist(-3, 3);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = random_tensor(rng, Shape{2, 5, 5});
    const TwoBitFilter f = random_filter(rng, Shape{2, 3, 3});
    const float a = a_dist(rng);
    std::vector<float> ax(x.values().begin(), x.values().end());
    for (float& v : ax) v *= a;
    const Tensor lhs = conv_mfree(Tensor(x.shape(), std::move(ax)), f, {1, 1});
    const Tensor base = conv_mfree(x, f, {1, 1});
    std::vector<float> rhs(base.values().begin(), base.values().end());
    for (float& v : rhs) v *= a;
    ASSERT_LE(max_rel_error(lhs, Tensor(lhs.shape(), std::move(rhs))), 1e-4);
  }
}

TEST(ConvMfreeTest, RejectsBadCodesAndShapes) {
  TwoBitFilter f{Shape{1, 2, 2}, CodeArray{1, 0, 1, 1}, 1.0f};
  try {
    conv_mfree(kInput2x2, f, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidCode);
  }
  f.codes = {1, 1, 1, 1};
  f.shape = Shape{2, 2, 2};
  EXPECT_THROW(conv_mfree(kInput2x2, f, {}), Error);
}

TEST(ConvLayerTest, StacksAndAddsBias) {
  std::mt19937 rng(9);
  const Tensor x = random_tensor(rng, Shape{3, 8, 8});
  std::vector<TwoBitFilter> fs;
  std::vector<Tensor> approx;
  for (int k = 0; k < 4; ++k) {
    fs.push_back(random_filter(rng, Shape{3, 3, 3}));
    approx.push_back(fs.back().approximate());
  }
  const std::vector<float> bias{0.5f, -1.0f, 0.0f, 2.0f};
  const Tensor out = conv_layer_forward(x, fs, bias, {1, 1});
  ASSERT_EQ(out.shape(), (Shape{4, 8, 8}));
  for (std::size_t k = 0; k < 4; ++k) {
    const Tensor ref = conv_reference(x, approx[k], {1, 1});
    for (std::size_t i = 0; i < ref.size(); ++i)
      ASSERT_NEAR(out[k * 64 + i], ref[i] + bias[k], 1e-4 * std::max(1.0f, std::fabs(ref[i])));
  }
  EXPECT_LE(max_rel_error(out, conv_layer_reference(x, approx, bias, {1, 1})), 1e-4);
}

TEST(ConvLayerTest, SingleFilterAndIdenticalFilters) {
  std::mt19937 rng(10);
  const Tensor x = random_tensor(rng, Shape{1, 4, 4});
  const TwoBitFilter f = random_filter(rng, Shape{1, 3, 3});
  const Tensor single = conv_layer_forward(x, std::vector<TwoBitFilter>{f}, std::nullopt, {});
  EXPECT_EQ(single.reshaped(Shape{2, 2}), conv_mfree(x, f, {}));
  const Tensor twin = conv_layer_forward(x, std::vector<TwoBitFilter>{f, f}, std::nullopt, {});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(twin[i], twin[4 + i]);
  EXPECT_THROW(conv_layer_forward(x, std::vector<TwoBitFilter>{f}, std::vector<float>{1, 2}, {}),
               Error);
}

TEST(ModelForwardTest, IdentityModel) {
  const LayerMeta meta{1, 1, 1, 1, 1, 0};
  const TwoBitFilter f{Shape{1, 1, 1}, CodeArray{1}, 1.0f};
  const TbnModel m{{make_layer(meta, std::span<const TwoBitFilter>(&f, 1))}};
  const Tensor x(Shape{1, 2, 3}, {1, -2, 3, -4, 5, -6});
  EXPECT_EQ(model_forward(m, x), x);
  EXPECT_EQ(model_forward_reference(m, x), x);
}

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "aax/backbone.hpp"
#include "aax/saliency.hpp"
#include "test_util.hpp"

namespace aax {
namespace {

using testing::random_tensor;

FeatureCapture make_capture(Tensor a, Tensor g, int cls = 1) {
  FeatureCapture c;
  c.activations = std::move(a);
  c.gradients = std::move(g);
  c.class_logits = {0.0, 0.0};
  c.class_index = cls;
  return c;
}

// From-scratch XGrad-CAM on raw arrays: weights, ReLU of the weighted sum,
// bilinear resize with half-pixel centers, min-max normalization.
std::vector<double> oracle_saliency(const std::vector<double>& A, const std::vector<double>& G,
                                    int C, int h, int w, int H, int W) {
  std::vector<double> cam(h * w, 0.0);
  for (int k = 0; k < C; ++k) {
    double num = 0, den = 0;
    for (int i = 0; i < h * w; ++i) {
      num += G[k * h * w + i] * A[k * h * w + i];
      den += A[k * h * w + i];
    }
    const double alpha = num / (den + 1e-8);
    for (int i = 0; i < h * w; ++i) cam[i] += alpha * A[k * h * w + i];
  }
  for (double& v : cam) v = v > 0 ? v : 0;
  std::vector<double> up(H * W);
  for (int Y = 0; Y < H; ++Y) {
    for (int X = 0; X < W; ++X) {
      double sy = (Y + 0.5) * h / H - 0.5, sx = (X + 0.5) * w / W - 0.5;
      sy = std::min(std::max(sy, 0.0), h - 1.0);
      sx = std::min(std::max(sx, 0.0), w - 1.0);
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double dy = sy - y0, dx = sx - x0;
      up[Y * W + X] = cam[y0 * w + x0] * (1 - dy) * (1 - dx) + cam[y0 * w + x1] * (1 - dy) * dx +
                      cam[y1 * w + x0] * dy * (1 - dx) + cam[y1 * w + x1] * dy * dx;
    }
  }
  const double lo = *std::min_element(up.begin(), up.end());
  const double hi = *std::max_element(up.begin(), up.end());
  for (double& v : up) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  return up;
}

TEST(XGradWeights, ConstantActivationGivesGradient) {
  Tensor a(Shape{3, 4, 4}, 1.0), g(Shape{3, 4, 4});
  const double cs[3] = {0.25, -1.0, 0.75};
  for (int k = 0; k < 3; ++k)
    for (double& v : g.channel(k)) v = cs[k];
  const auto alpha = xgradcam_weights(make_capture(a, g));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(alpha[k], cs[k], 1e-9);
}

TEST(XGradWeights, ZeroActivationGivesZero) {
  const auto alpha =
      xgradcam_weights(make_capture(Tensor(Shape{2, 3, 3}), Tensor(Shape{2, 3, 3}, 0.7)));
  EXPECT_EQ(alpha[0], 0.0);
  EXPECT_EQ(alpha[1], 0.0);
}

TEST(XGradWeights, DirectEvaluation) {
  const Tensor a(Shape{1, 2, 2}, {1, 2, 3, 4});
  const auto alpha = xgradcam_weights(make_capture(a, Tensor(Shape{1, 2, 2}, 0.1)));
  EXPECT_NEAR(alpha[0], 0.1, 1e-9);
}

TEST(XGradWeights, ShapeMismatch) {
  EXPECT_THROW(xgradcam_weights(make_capture(Tensor(Shape{1, 2, 2}), Tensor(Shape{1, 2, 3}))),
               InputError);
}

TEST(Saliency, IdentityPathIsNormalizedUpsampledActivation) {
  const Tensor a(Shape{1, 2, 2}, {1, 2, 3, 4});
  const Tensor g(Shape{1, 2, 2}, 1.0);
  const SaliencyMap m = compute_saliency(make_capture(a, g), 1, 4, 4, "x");
  const auto ref = oracle_saliency(a.raw(), g.raw(), 1, 2, 2, 4, 4);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(m.values.values[i], ref[i], 1e-12);
  EXPECT_DOUBLE_EQ(m.values.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(m.values.at(3, 3), 1.0);
}

TEST(Saliency, NonpositiveEvidenceGivesZeroMap) {
  const Tensor a(Shape{1, 3, 3}, 1.0);
  const Tensor g(Shape{1, 3, 3}, -2.0);
  const SaliencyMap m = compute_saliency(make_capture(a, g), 1, 6, 6, "x");
  for (double v : m.values.values) EXPECT_EQ(v, 0.0);
}

TEST(Saliency, Errors) {
  const auto cap = make_capture(Tensor(Shape{1, 2, 2}, 1), Tensor(Shape{1, 2, 2}, 1));
  EXPECT_THROW(compute_saliency(cap, 1, 0, 4, "x"), InputError);
  EXPECT_THROW(compute_saliency(cap, 1, 4, -1, "x"), InputError);
  EXPECT_THROW(compute_saliency(cap, 0, 4, 4, "x"), InputError);
}

TEST(Saliency, MatchesStraightLineOracleOnTinyNetwork) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Backbone bb = testing::tiny_backbone(seed, 8, 1);
    const Tensor x = random_tensor(bb.input_shape(), 100 + seed);
    const FeatureCapture cap = capture(bb, x, 1);
    const SaliencyMap m = compute_saliency(cap, 1, 13, 11, "tiny");
    const Shape s = cap.activations.shape();
    const auto ref =
        oracle_saliency(cap.activations.raw(), cap.gradients.raw(), s.channels, s.height,
                        s.width, 13, 11);
    ASSERT_EQ(m.height(), 13);
    ASSERT_EQ(m.width(), 11);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(m.values.values[i], ref[i], 1e-6);
  }
}

TEST(Saliency, RangeShapeAndDeterminism) {
  const Backbone bb = build_backbone([] {
    BackboneSpec s;
    s.family = Family::kEfficient;
    s.input_size = 32;
    s.in_channels = 1;
    s.width = 4;
    use_default_normalization(s);
    return s;
  }());
  const Tensor x = random_tensor(bb.input_shape(), 3);
  const FeatureCapture cap = capture(bb, x, 1);
  const SaliencyMap a = compute_saliency(cap, 1, 40, 40, "b");
  const SaliencyMap b = compute_saliency(cap, 1, 40, 40, "b");
  EXPECT_EQ(a.values, b.values);
  for (double v : a.values.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(a.model_id, "b");
  EXPECT_EQ(a.class_index, 1);
}

TEST(Saliency, ArgmaxInvariantUnderPositiveActivationScale) {
  const Tensor a = random_tensor(Shape{3, 4, 4}, 1, 0.0, 1.0);
  const Tensor g = random_tensor(Shape{3, 4, 4}, 2);
  Tensor a2 = a;
  for (double& v : a2.values()) v *= 3.7;
  const SaliencyMap m1 = compute_saliency(make_capture(a, g), 1, 8, 8, "x");
  const SaliencyMap m2 = compute_saliency(make_capture(a2, g), 1, 8, 8, "x");
  const auto i1 = std::max_element(m1.values.values.begin(), m1.values.values.end()) -
                  m1.values.values.begin();
  const auto i2 = std::max_element(m2.values.values.begin(), m2.values.values.end()) -
                  m2.values.values.begin();
  EXPECT_EQ(i1, i2);
}

}  // namespace
}  // namespace aax

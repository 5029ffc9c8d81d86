#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "aax/backbone.hpp"
#include "aax/tensor.hpp"

namespace aax {

inline constexpr double kXGradEpsilon = 1e-8;

// H x W map in [0, 1] at input-image resolution.
struct SaliencyMap {
  Plane values;
  int class_index = 0;
  std::string model_id;

  int height() const noexcept { return values.height; }
  int width() const noexcept { return values.width; }
};

// XGrad-CAM channel weights:
//   alpha_k = sum_ij(g_kij * A_kij) / (sum_ij A_kij + eps)
inline std::vector<double> xgradcam_weights(const FeatureCapture& cap) {
  const Shape& s = cap.activations.shape();
  if (!(s == cap.gradients.shape())) {
    throw InputError("xgradcam_weights: activations " + s.str() + " vs gradients " +
                     cap.gradients.shape().str());
  }
  std::vector<double> alpha(s.channels, 0.0);
  for (int c = 0; c < s.channels; ++c) {
    const auto a = cap.activations.channel(c);
    const auto g = cap.gradients.channel(c);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += g[i] * a[i];
      den += a[i];
    }
    alpha[c] = num / (den + kXGradEpsilon);
  }
  return alpha;
}

// Scales a plane to [0, 1]; a constant plane maps to all zeros.
inline void min_max_normalize(Plane& p) {
  if (p.values.empty()) return;
  const auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
  const double mn = *lo, range = *hi - *lo;
  if (!(range > 0.0)) {
    std::fill(p.values.begin(), p.values.end(), 0.0);
    return;
  }
  for (double& v : p.values) v = (v - mn) / range;
}

// ReLU(sum_k alpha_k A_k), bilinearly upsampled to output size, then
// min-max normalized. A weighted sum that is nonpositive everywhere yields the
// all-zero map.
inline SaliencyMap compute_saliency(const FeatureCapture& cap, int class_index, int out_height,
                                    int out_width, std::string model_id = {}) {
  if (out_height <= 0 || out_width <= 0) {
    throw InputError("compute_saliency: output shape must be positive");
  }
  if (class_index != cap.class_index) {
    throw InputError("compute_saliency: capture was taken for class " +
                     std::to_string(cap.class_index) + ", not " + std::to_string(class_index));
  }
  const auto alpha = xgradcam_weights(cap);
  const Shape& s = cap.activations.shape();
  std::vector<double> cam(s.plane(), 0.0);
  for (int c = 0; c < s.channels; ++c) {
    const auto a = cap.activations.channel(c);
    for (std::size_t i = 0; i < cam.size(); ++i) cam[i] += alpha[c] * a[i];
  }
  for (double& v : cam) v = std::max(v, 0.0);

  SaliencyMap map;
  map.class_index = class_index;
  map.model_id = std::move(model_id);
  map.values = resize_bilinear(cam, s.height, s.width, out_height, out_width);
  min_max_normalize(map.values);
  return map;
}

}  // namespace aax

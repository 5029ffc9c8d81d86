#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "aax/backbone.hpp"
#include "aax/rng.hpp"

namespace aax {

// Monte Carlo Dropout predictive summary for one image and one model.
struct McPrediction {
  std::vector<double> mean_probs;
  double uncertainty = 0.0;
  int k_passes = 0;
  // K x num_classes, row-major; kept only when auditing.
  std::vector<std::vector<double>> per_pass_probs;
  std::vector<std::string> warnings;

  friend bool operator==(const McPrediction&, const McPrediction&) = default;
};

inline std::uint64_t pass_seed(std::uint64_t seed, int pass) {
  return derive_seed(seed, static_cast<std::uint64_t>(pass));
}

// Population standard deviation. Deviations are taken from the first value,
// so identical samples give exactly 0.
inline double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const double n = static_cast<double>(xs.size());
  double md = 0.0;
  for (double x : xs) md += x - xs.front();
  md /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - xs.front() - md) * (x - xs.front() - md);
  return std::sqrt(ss / n);
}

// Class whose per-pass probability spread defines the uncertainty score: the
// positive (Diseased) class for binary heads, the predicted class otherwise.
inline int uncertainty_class(const std::vector<double>& mean_probs, int positive_class) {
  if (mean_probs.size() == 2) return positive_class;
  return static_cast<int>(std::max_element(mean_probs.begin(), mean_probs.end()) -
                          mean_probs.begin());
}

// Summarizes K per-pass probability vectors. Shared by mc_predict and by
// anything that re-derives the score from audited passes.
inline McPrediction summarize_passes(std::vector<std::vector<double>> passes, int positive_class,
                                     bool keep_passes) {
  if (passes.empty()) throw InputError("no stochastic passes to summarize");
  McPrediction out;
  const std::size_t classes = passes.front().size();
  out.k_passes = static_cast<int>(passes.size());
  // Shifted by the first pass: identical passes reproduce it bitwise.
  const std::vector<double>& first = passes.front();
  out.mean_probs.assign(classes, 0.0);
  for (const auto& p : passes) {
    for (std::size_t c = 0; c < classes; ++c) out.mean_probs[c] += p[c] - first[c];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    out.mean_probs[c] = first[c] + out.mean_probs[c] / static_cast<double>(passes.size());
  }
  const int cls = uncertainty_class(out.mean_probs, positive_class);
  std::vector<double> column;
  column.reserve(passes.size());
  for (const auto& p : passes) column.push_back(p[cls]);
  out.uncertainty = population_std(column);
  if (keep_passes) out.per_pass_probs = std::move(passes);
  return out;
}

// K stochastic forward passes with dropout active; pass k uses sub-seed
// pass_seed(seed, k), so the result is independent of evaluation order and
// equals K independent forward_stochastic calls. The deterministic trunk is
// evaluated once and only the layers from the first dropout onward are
// recomputed per pass.
inline McPrediction mc_predict(const Backbone& backbone, const Tensor& image, int k,
                               std::uint64_t seed, int positive_class = 1, bool audit = false) {
  if (k < 1) throw InputError("mc_predict: k must be >= 1, got " + std::to_string(k));
  if (positive_class < 0 || positive_class >= backbone.num_classes()) {
    throw InputError("mc_predict: positive class out of range");
  }
  const auto& net = backbone.network();
  const std::size_t split = net.first_stochastic();
  nn::Workspace ws;
  std::vector<std::vector<double>> passes;
  passes.reserve(k);
  for (int pass = 0; pass < k; ++pass) {
    net.forward(image, ws, {true, pass_seed(seed, pass)}, pass == 0 ? 0 : split);
    const auto& logits = ws.values[net.output()];
    passes.push_back(nn::softmax(logits.values()));
  }
  McPrediction out = summarize_passes(std::move(passes), positive_class, audit);
  if (backbone.spec().dropout_rate == 0.0 && k > 1) {
    out.warnings.push_back("dropout_rate is 0: all passes identical, uncertainty is 0");
  }
  return out;
}

}  // namespace aax

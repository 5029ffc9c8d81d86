#pragma once

// Ensemble decision protocol: flag on joint uncertainty, classify by
// consensus of confident models, and intersect the agreeing models' saliency
// maps into one binary mask.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aax/error.hpp"
#include "aax/saliency.hpp"

namespace aax {

enum class IntersectionMode {
  // Binarize each map at tau, then logical AND.
  kBinarizeThenAnd,
  // Pixel-wise minimum, min-max renormalized, then binarized at tau.
  kMinRenormalizeThreshold,
};

struct PipelineConfig {
  double theta = 0.1;
  double tau = 0.5;
  int k_passes = 30;
  std::uint64_t seed = 0;
  int positive_class = 1;  // index of Diseased
  IntersectionMode intersection = IntersectionMode::kBinarizeThenAnd;
  bool audit = false;

  void validate() const {
    if (!(theta > 0)) throw ConfigError("theta must be positive");
    if (!(tau > 0 && tau < 1)) throw ConfigError("tau must be in (0, 1)");
    if (k_passes < 1) throw ConfigError("k_passes must be >= 1");
    if (positive_class < 0 || positive_class > 1) {
      throw ConfigError("positive_class must be 0 or 1 for the binary protocol");
    }
  }
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;  // 0 or 1, row-major

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  std::size_t positive_pixel_count() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
  }
  bool same_shape(const BinaryMask& o) const { return height == o.height && width == o.width; }
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct ModelOutput {
  std::string model_id;
  std::vector<double> mean_probs;
  double uncertainty = 0.0;
  std::optional<SaliencyMap> saliency;
};

enum class Verdict { kHealthy, kDiseased, kFlagged };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kHealthy: return "Healthy";
    case Verdict::kDiseased: return "Diseased";
    case Verdict::kFlagged: return "Flagged";
  }
  return "?";
}

inline Verdict parse_verdict(const std::string& s) {
  if (s == "Healthy") return Verdict::kHealthy;
  if (s == "Diseased") return Verdict::kDiseased;
  if (s == "Flagged") return Verdict::kFlagged;
  throw InputError("unknown verdict '" + s + "'");
}

inline constexpr const char* kReasonNoConsensus = "no qualifying consensus";

struct EnsembleDecision {
  std::string image_id;
  Verdict verdict = Verdict::kFlagged;
  std::optional<BinaryMask> mask;
  std::vector<std::string> agreeing_models;
  std::vector<ModelOutput> evidence;
  std::string reason;
};

// Rule (a): at least two uncertainties strictly above theta.
inline bool should_flag(std::span<const double> uncertainties, double theta) {
  const auto above = std::count_if(uncertainties.begin(), uncertainties.end(),
                                   [theta](double u) { return u > theta; });
  return above >= 2;
}

struct Consensus {
  enum class Kind { kDiseased, kHealthy, kNone };
  Kind kind = Kind::kNone;
  std::vector<int> agreeing;  // indices into the outputs
};

inline double positive_prob(const ModelOutput& o, int positive_class) {
  return o.mean_probs.at(positive_class);
}
inline double negative_prob(const ModelOutput& o, int positive_class) {
  return o.mean_probs.at(1 - positive_class);
}

// Rule (b): Diseased if >= 2 models have p_D > 0.5 and u < theta; else
// Healthy by the same test on p_H; else no consensus.
inline Consensus consensus(std::span<const ModelOutput> outputs, double theta,
                           int positive_class = 1) {
  Consensus out;
  for (int i = 0; i < static_cast<int>(outputs.size()); ++i) {
    const auto& o = outputs[i];
    if (positive_prob(o, positive_class) > 0.5 && o.uncertainty < theta) out.agreeing.push_back(i);
  }
  if (out.agreeing.size() >= 2) {
    out.kind = Consensus::Kind::kDiseased;
    return out;
  }
  out.agreeing.clear();
  for (int i = 0; i < static_cast<int>(outputs.size()); ++i) {
    const auto& o = outputs[i];
    if (negative_prob(o, positive_class) > 0.5 && o.uncertainty < theta) out.agreeing.push_back(i);
  }
  if (out.agreeing.size() >= 2) {
    out.kind = Consensus::Kind::kHealthy;
    return out;
  }
  out.agreeing.clear();
  return out;
}

inline BinaryMask binarize(const Plane& p, double tau) {
  BinaryMask m(p.height, p.width);
  for (std::size_t i = 0; i < p.values.size(); ++i) m.values[i] = p.values[i] > tau ? 1 : 0;
  return m;
}

inline BinaryMask intersect_masks(std::span<const SaliencyMap> maps, double tau,
                                  IntersectionMode mode = IntersectionMode::kBinarizeThenAnd) {
  if (maps.empty()) throw InputError("intersect_masks: empty map list");
  const int h = maps.front().height(), w = maps.front().width();
  for (const auto& m : maps) {
    if (m.height() != h || m.width() != w) {
      throw InputError("intersect_masks: saliency map shapes differ");
    }
  }
  if (mode == IntersectionMode::kMinRenormalizeThreshold) {
    Plane lo = maps.front().values;
    for (const auto& m : maps.subspan(1)) {
      for (std::size_t i = 0; i < lo.values.size(); ++i) {
        lo.values[i] = std::min(lo.values[i], m.values.values[i]);
      }
    }
    min_max_normalize(lo);
    return binarize(lo, tau);
  }
  BinaryMask out = binarize(maps.front().values, tau);
  for (const auto& m : maps.subspan(1)) {
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] &= m.values.values[i] > tau ? 1 : 0;
    }
  }
  return out;
}

// Full protocol for one image and three model outputs. Inputs that pass the
// flag rule but reach neither consensus are routed to review as Flagged with
// reason "no qualifying consensus", so every input gets exactly one verdict.
inline EnsembleDecision decide(std::vector<ModelOutput> outputs, const PipelineConfig& config,
                               std::string image_id = {}) {
  if (outputs.size() != 3) {
    throw InputError("decide: expected 3 model outputs, got " + std::to_string(outputs.size()));
  }
  EnsembleDecision d;
  d.image_id = std::move(image_id);

  std::vector<double> us;
  for (const auto& o : outputs) us.push_back(o.uncertainty);
  const auto above = std::count_if(us.begin(), us.end(),
                                   [&](double u) { return u > config.theta; });
  if (should_flag(us, config.theta)) {
    d.verdict = Verdict::kFlagged;
    d.reason = std::to_string(above) + " models above theta";
    d.evidence = std::move(outputs);
    return d;
  }

  const Consensus c = consensus(outputs, config.theta, config.positive_class);
  for (int i : c.agreeing) d.agreeing_models.push_back(outputs[i].model_id);
  switch (c.kind) {
    case Consensus::Kind::kDiseased: {
      std::vector<SaliencyMap> maps;
      for (int i : c.agreeing) {
        if (!outputs[i].saliency) {
          throw InvariantError("decide: agreeing model '" + outputs[i].model_id +
                               "' has no saliency map");
        }
        maps.push_back(*outputs[i].saliency);
      }
      d.verdict = Verdict::kDiseased;
      d.mask = intersect_masks(maps, config.tau, config.intersection);
      d.reason = std::to_string(c.agreeing.size()) + " models agree on Diseased";
      break;
    }
    case Consensus::Kind::kHealthy:
      d.verdict = Verdict::kHealthy;
      d.reason = std::to_string(c.agreeing.size()) + " models agree on Healthy";
      break;
    case Consensus::Kind::kNone:
      d.verdict = Verdict::kFlagged;
      d.reason = kReasonNoConsensus;
      break;
  }
  d.evidence = std::move(outputs);
  return d;
}

}  // namespace aax

#pragma once

// Classification and segmentation metrics plus dataset-level aggregation of
// ensemble decisions against ground truth.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "aax/dataset.hpp"
#include "aax/decision.hpp"
#include "aax/error.hpp"
#include "aax/image.hpp"

namespace aax {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<std::string> degeneracies;
};

// Ratios that would divide by zero are reported as 0 and listed in
// `degeneracies`.
inline ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw InputError("classification_metrics: all counts are zero");
  ClassificationMetrics m;
  const auto tp = static_cast<double>(c.tp);
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fp == 0) {
    m.degeneracies.push_back("precision undefined (tp + fp = 0)");
  } else {
    m.precision = tp / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn == 0) {
    m.degeneracies.push_back("recall undefined (tp + fn = 0)");
  } else {
    m.recall = tp / static_cast<double>(c.tp + c.fn);
  }
  if (m.precision + m.recall == 0.0) {
    m.degeneracies.push_back("f1 undefined (precision + recall = 0)");
  } else {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

inline void check_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (!a.same_shape(b)) {
    throw InputError(std::string(what) + ": mask shapes differ (" + std::to_string(a.height) +
                     "x" + std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
  }
}

// Per-pixel confusion of pred against truth.
inline ConfusionCounts pixel_confusion(const BinaryMask& pred, const BinaryMask& truth) {
  check_same_shape(pred, truth, "pixel_confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i], t = truth.values[i];
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// |pred AND truth| / |pred OR truth|; two empty masks agree perfectly (1).
inline double iou(const BinaryMask& pred, const BinaryMask& truth) {
  check_same_shape(pred, truth, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    inter += pred.values[i] & truth.values[i];
    uni += pred.values[i] | truth.values[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Union of half-open rectangles, clipped to the image.
inline BinaryMask boxes_to_mask(const std::vector<Box>& boxes, int height, int width) {
  if (height <= 0 || width <= 0) throw InputError("boxes_to_mask: nonpositive shape");
  BinaryMask m(height, width);
  for (const auto& b : boxes) {
    if (b.x2 <= b.x1 || b.y2 <= b.y1) {
      throw InputError("boxes_to_mask: inverted box (" + std::to_string(b.x1) + "," +
                       std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
                       std::to_string(b.y2) + ")");
    }
    const int x1 = std::clamp(b.x1, 0, width), x2 = std::clamp(b.x2, 0, width);
    const int y1 = std::clamp(b.y1, 0, height), y2 = std::clamp(b.y2, 0, height);
    for (int y = y1; y < y2; ++y)
      for (int x = x1; x < x2; ++x) m.at(y, x) = 1;
  }
  return m;
}

struct ImageRecord {
  std::string id;
  Verdict verdict = Verdict::kFlagged;
  int truth_label = 0;
  std::vector<std::string> model_ids;
  std::vector<double> p_per_model;  // Diseased probability
  std::vector<double> u_per_model;
  std::optional<double> iou;
  std::optional<std::string> flagged_reason;
};

inline nlohmann::json to_json(const ImageRecord& r) {
  nlohmann::json j{{"id", r.id},
                   {"verdict", to_string(r.verdict)},
                   {"truth_label", r.truth_label},
                   {"models", r.model_ids},
                   {"p_per_model", r.p_per_model},
                   {"u_per_model", r.u_per_model}};
  if (r.iou) j["iou"] = *r.iou;
  if (r.flagged_reason) j["flagged_reason"] = *r.flagged_reason;
  return j;
}

struct EvalReport {
  std::size_t n_images = 0;
  std::size_t n_flagged = 0;
  ConfusionCounts counts;
  // Absent when every image was flagged.
  std::optional<ClassificationMetrics> classification;
  // Absent when no Diseased verdict had ground-truth geometry.
  std::optional<double> mean_iou;
  std::size_t n_iou = 0;
  double flag_rate = 0.0;
  std::vector<ImageRecord> records;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"v", 1},
                   {"n_images", r.n_images},
                   {"n_flagged", r.n_flagged},
                   {"flag_rate", r.flag_rate},
                   {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn},
                               {"tn", r.counts.tn}}},
                   {"n_iou", r.n_iou}};
  if (r.classification) {
    const auto& c = *r.classification;
    j["accuracy"] = c.accuracy;
    j["precision"] = c.precision;
    j["recall"] = c.recall;
    j["f1"] = c.f1;
    j["degeneracies"] = c.degeneracies;
  } else {
    j["accuracy"] = j["precision"] = j["recall"] = j["f1"] = nullptr;
    j["classification_note"] = "not applicable: no unflagged images";
  }
  j["mean_iou"] = r.mean_iou ? nlohmann::json(*r.mean_iou) : nlohmann::json(nullptr);
  return j;
}

// Ground-truth mask for a sample at the given shape, if it has geometry.
using TruthLoader =
    std::function<std::optional<BinaryMask>(const ImageSample&, int height, int width)>;

inline std::optional<BinaryMask> load_truth_mask(const ImageSample& s, int height, int width) {
  if (s.mask_path) return read_mask_png(*s.mask_path);
  if (s.boxes) return boxes_to_mask(*s.boxes, height, width);
  return std::nullopt;
}

// Classification metrics over non-Flagged images (positive = Diseased),
// mean IoU over Diseased verdicts that have ground-truth geometry, and the
// flag rate over all images.
inline EvalReport evaluate_dataset(const std::vector<EnsembleDecision>& decisions,
                                   const DatasetManifest& truth,
                                   const TruthLoader& loader = load_truth_mask) {
  std::vector<std::string> missing;
  for (const auto& d : decisions) {
    if (!truth.find(d.image_id)) missing.push_back(d.image_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw InputError("evaluate_dataset: ids not in ground truth: " + list);
  }
  const int positive = truth.positive_class();
  EvalReport r;
  r.n_images = decisions.size();
  double iou_sum = 0.0;
  for (const auto& d : decisions) {
    const ImageSample& s = *truth.find(d.image_id);
    ImageRecord rec;
    rec.id = d.image_id;
    rec.verdict = d.verdict;
    rec.truth_label = s.label;
    for (const auto& e : d.evidence) {
      rec.model_ids.push_back(e.model_id);
      rec.p_per_model.push_back(e.mean_probs.at(positive));
      rec.u_per_model.push_back(e.uncertainty);
    }
    const bool actual = s.label == positive;
    if (d.verdict == Verdict::kFlagged) {
      ++r.n_flagged;
      rec.flagged_reason = d.reason;
    } else {
      const bool predicted = d.verdict == Verdict::kDiseased;
      if (predicted && actual) ++r.counts.tp;
      else if (predicted) ++r.counts.fp;
      else if (actual) ++r.counts.fn;
      else ++r.counts.tn;
    }
    if (d.verdict == Verdict::kDiseased && d.mask) {
      if (auto gt = loader(s, d.mask->height, d.mask->width)) {
        rec.iou = iou(*d.mask, *gt);
        iou_sum += *rec.iou;
        ++r.n_iou;
      }
    }
    r.records.push_back(std::move(rec));
  }
  if (r.counts.total() > 0) r.classification = classification_metrics(r.counts);
  if (r.n_iou > 0) r.mean_iou = iou_sum / static_cast<double>(r.n_iou);
  r.flag_rate = r.n_images == 0 ? 0.0
                                : static_cast<double>(r.n_flagged) / static_cast<double>(r.n_images);
  return r;
}

}  // namespace aax

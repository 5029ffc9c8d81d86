#pragma once

// Orchestration of train -> annotate -> evaluate over a run directory:
//
//   run_dir/config.json
//   run_dir/checkpoints/{a,b,c}/     weights.bin, meta.json, train_report.json
//   run_dir/decisions.jsonl          one record per image, sorted by id
//   run_dir/masks/                   Diseased masks, 0/255 PNG at source size
//   run_dir/overlays/                per-model saliency overlays
//   run_dir/review-spool/            review store for Flagged images
//   run_dir/errors.jsonl             per-image failures
//   run_dir/audit.jsonl              per-pass probabilities (audit mode)
//   run_dir/eval_report.json, eval_records.jsonl

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "aax/backbone.hpp"
#include "aax/dataset.hpp"
#include "aax/decision.hpp"
#include "aax/error.hpp"
#include "aax/evaluation.hpp"
#include "aax/image.hpp"
#include "aax/review.hpp"
#include "aax/rng.hpp"
#include "aax/saliency.hpp"
#include "aax/training.hpp"
#include "aax/uncertainty.hpp"

namespace aax {

inline const std::array<std::string, 3> kModelIds = {"a", "b", "c"};

inline int model_index(const std::string& id) {
  for (int i = 0; i < 3; ++i) {
    if (kModelIds[i] == id) return i;
  }
  throw ConfigError("unknown model id '" + id + "' (expected a, b or c)");
}

inline Family family_for(const std::string& model_id) {
  static constexpr Family families[3] = {Family::kResidual, Family::kEfficient, Family::kDense};
  return families[model_index(model_id)];
}

// Architecture settings shared by the three members.
struct ModelOptions {
  int input_size = 224;
  int in_channels = 3;
  int width = 8;
  double dropout_rate = 0.3;
  std::string target_layer;
};

inline void to_json(nlohmann::json& j, const ModelOptions& m) {
  j = nlohmann::json{{"input_size", m.input_size},
                     {"in_channels", m.in_channels},
                     {"width", m.width},
                     {"dropout_rate", m.dropout_rate},
                     {"target_layer", m.target_layer}};
}

inline void from_json(const nlohmann::json& j, ModelOptions& m) {
  m.input_size = j.value("input_size", 224);
  m.in_channels = j.value("in_channels", 3);
  m.width = j.value("width", 8);
  m.dropout_rate = j.value("dropout_rate", 0.3);
  m.target_layer = j.value("target_layer", std::string{});
}

inline std::uint64_t member_seed(std::uint64_t seed, const std::string& model_id) {
  return derive_seed(seed, 0x7a11, static_cast<std::uint64_t>(model_index(model_id)));
}

inline BackboneSpec member_spec(const std::string& model_id, const ModelOptions& opt,
                                std::uint64_t seed) {
  BackboneSpec s;
  s.name = model_id;
  s.family = family_for(model_id);
  s.target_layer = opt.target_layer;
  s.dropout_rate = opt.dropout_rate;
  s.input_size = opt.input_size;
  s.in_channels = opt.in_channels;
  s.width = opt.width;
  use_default_normalization(s);
  s.init_seed = derive_seed(member_seed(seed, model_id), 1);
  return s;
}

inline std::string pipeline_to_string(IntersectionMode m) {
  return m == IntersectionMode::kBinarizeThenAnd ? "and" : "min";
}

inline IntersectionMode parse_intersection(const std::string& s) {
  if (s == "and") return IntersectionMode::kBinarizeThenAnd;
  if (s == "min") return IntersectionMode::kMinRenormalizeThreshold;
  throw ConfigError("unknown intersection mode '" + s + "' (expected and or min)");
}

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json{{"theta", c.theta},
                     {"tau", c.tau},
                     {"k_passes", c.k_passes},
                     {"seed", c.seed},
                     {"positive_class", c.positive_class},
                     {"intersection", pipeline_to_string(c.intersection)},
                     {"audit", c.audit}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c.theta = j.value("theta", 0.1);
  c.tau = j.value("tau", 0.5);
  c.k_passes = j.value("k_passes", 30);
  c.seed = j.value("seed", std::uint64_t{0});
  c.positive_class = j.value("positive_class", 1);
  c.intersection = parse_intersection(j.value("intersection", std::string("and")));
  c.audit = j.value("audit", false);
}

inline fs::path checkpoint_dir(const fs::path& run_dir, const std::string& model_id) {
  return run_dir / "checkpoints" / model_id;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

// Merges `section` into run_dir/config.json under `key`.
inline void snapshot_config(const fs::path& run_dir, const std::string& key,
                            const nlohmann::json& section) {
  const fs::path file = run_dir / "config.json";
  nlohmann::json j = nlohmann::json::object();
  if (std::ifstream in(file); in) j = nlohmann::json::parse(in, nullptr, false);
  if (!j.is_object()) j = nlohmann::json::object();
  j["v"] = 1;
  j[key] = section;
  write_text(file, j.dump(2) + "\n");
}

// --- training ------------------------------------------------------------

inline TrainReport train_member(const fs::path& run_dir, const std::string& model_id,
                                const ModelOptions& opt, const DatasetManifest& train_set,
                                const DatasetManifest& val_set, const TrainConfig& config,
                                std::uint64_t seed) {
  const BackboneSpec spec = member_spec(model_id, opt, seed);
  auto [trained, report] = train_model(build_backbone(spec), training_records(train_set),
                                       training_records(val_set), config,
                                       derive_seed(member_seed(seed, model_id), 2));
  const fs::path dir = checkpoint_dir(run_dir, model_id);
  save_checkpoint(trained, dir, config_hash(config));
  write_text(dir / "train_report.json", nlohmann::json(report).dump(2) + "\n");
  nlohmann::json section{{"model", opt}, {"train", config}, {"seed", seed}};
  snapshot_config(run_dir, "train_" + model_id, section);
  return report;
}

inline std::vector<Backbone> load_ensemble(const fs::path& run_dir) {
  std::vector<Backbone> models;
  for (const auto& id : kModelIds) {
    const fs::path dir = checkpoint_dir(run_dir, id);
    if (!fs::exists(dir / "meta.json") || !fs::exists(dir / "weights.bin")) {
      throw ConfigError("missing checkpoint for model " + id + " in " + dir.string());
    }
    models.push_back(load_checkpoint(dir));
  }
  return models;
}

// --- annotation ----------------------------------------------------------

struct ImageAnnotation {
  EnsembleDecision decision;
  // Per-model positive-class saliency at source resolution, where computed.
  std::vector<std::optional<SaliencyMap>> saliency;
  std::vector<McPrediction> predictions;
};

inline std::uint64_t image_seed(std::uint64_t seed, const std::string& image_id,
                                std::size_t model) {
  return derive_seed(seed, fnv1a(image_id), model);
}

// Runs the three members on one decoded image. Saliency is computed for the
// models a Diseased verdict intersects, for every model on Flagged images
// (overlays for review), and for every model when saliency_for_all is set.
inline ImageAnnotation annotate_image(const std::vector<Backbone>& models, const Image& image,
                                      const std::string& image_id, const PipelineConfig& config,
                                      bool saliency_for_all = false) {
  if (models.size() != 3) throw ConfigError("annotation needs exactly three models");
  const int h = image.pixels.shape().height, w = image.pixels.shape().width;
  ImageAnnotation out;
  std::vector<Tensor> inputs;
  std::vector<ModelOutput> outputs;
  for (std::size_t m = 0; m < models.size(); ++m) {
    inputs.push_back(preprocess(image.pixels, models[m].spec()));
    McPrediction pred = mc_predict(models[m], inputs.back(), config.k_passes,
                                   image_seed(config.seed, image_id, m), config.positive_class,
                                   config.audit);
    outputs.push_back({models[m].spec().name, pred.mean_probs, pred.uncertainty, std::nullopt});
    out.predictions.push_back(std::move(pred));
  }

  std::vector<bool> need(models.size(), saliency_for_all);
  std::vector<double> us;
  for (const auto& o : outputs) us.push_back(o.uncertainty);
  const Consensus c = should_flag(us, config.theta)
                          ? Consensus{}
                          : consensus(outputs, config.theta, config.positive_class);
  if (c.kind == Consensus::Kind::kDiseased) {
    for (int i : c.agreeing) need[i] = true;
  } else if (c.kind == Consensus::Kind::kNone) {
    std::fill(need.begin(), need.end(), true);
  }
  out.saliency.resize(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (!need[m]) continue;
    const FeatureCapture cap = capture(models[m], inputs[m], config.positive_class);
    out.saliency[m] = compute_saliency(cap, config.positive_class, h, w, outputs[m].model_id);
    outputs[m].saliency = out.saliency[m];
  }
  out.decision = decide(std::move(outputs), config, image_id);
  return out;
}

inline std::string file_stem_for(const std::string& image_id) { return item_id_for(image_id); }

inline nlohmann::json decision_to_json(const EnsembleDecision& d, const std::string& mask_rel) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& e : d.evidence) {
    models.push_back({{"model_id", e.model_id}, {"mean_probs", e.mean_probs}, {"u", e.uncertainty}});
  }
  nlohmann::json j{{"v", 1},
                   {"id", d.image_id},
                   {"verdict", to_string(d.verdict)},
                   {"reason", d.reason},
                   {"agreeing_models", d.agreeing_models},
                   {"models", models}};
  j["mask"] = d.mask ? nlohmann::json(mask_rel) : nlohmann::json();
  if (d.mask) j["mask_positive_pixels"] = d.mask->positive_pixel_count();
  return j;
}

// Parses decisions.jsonl; mask paths are resolved against run_dir.
inline std::vector<EnsembleDecision> read_decisions(const fs::path& file, const fs::path& run_dir) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open decisions file " + file.string());
  std::vector<EnsembleDecision> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    EnsembleDecision d;
    d.image_id = j.at("id").get<std::string>();
    d.verdict = parse_verdict(j.at("verdict").get<std::string>());
    d.reason = j.value("reason", std::string{});
    d.agreeing_models = j.value("agreeing_models", std::vector<std::string>{});
    for (const auto& m : j.at("models")) {
      d.evidence.push_back({m.at("model_id").get<std::string>(),
                            m.at("mean_probs").get<std::vector<double>>(),
                            m.at("u").get<double>(), std::nullopt});
    }
    if (j.contains("mask") && !j.at("mask").is_null()) {
      d.mask = read_mask_png(run_dir / j.at("mask").get<std::string>());
    }
    out.push_back(std::move(d));
  }
  return out;
}

struct ImageFailure {
  std::string id;
  std::string error;
};

struct AnnotateResult {
  std::vector<EnsembleDecision> decisions;  // sorted by image id
  std::vector<ImageFailure> failures;
  std::size_t enqueued = 0;
};

inline unsigned worker_count(std::size_t jobs) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(hw, std::max<std::size_t>(jobs, 1)));
}

// Annotates every image of the manifest with the ensemble and persists the
// artifacts under run_dir. Images are processed in parallel; outputs are
// written afterwards in image-id order, so the files do not depend on thread
// scheduling.
inline AnnotateResult annotate_images(const std::vector<Backbone>& models,
                                      const DatasetManifest& manifest, PipelineConfig config,
                                      const fs::path& run_dir) {
  config.validate();
  config.positive_class = manifest.positive_class();
  fs::create_directories(run_dir / "masks");
  fs::create_directories(run_dir / "overlays");
  snapshot_config(run_dir, "annotate", config);

  std::vector<const ImageSample*> samples;
  for (const auto& r : manifest.records) samples.push_back(&r);
  std::sort(samples.begin(), samples.end(),
            [](const ImageSample* a, const ImageSample* b) { return a->id < b->id; });

  struct Slot {
    std::optional<ImageAnnotation> ann;
    std::optional<Image> image;
    std::string error;
  };
  std::vector<Slot> slots(samples.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        Image img = read_png(samples[i]->path);
        slots[i].ann = annotate_image(models, img, samples[i]->id, config);
        slots[i].image = std::move(img);
      } catch (const std::exception& e) {
        slots[i].error = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const unsigned n = worker_count(samples.size());
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(work);
    work();
  }

  AnnotateResult result;
  ReviewStore spool(run_dir / "review-spool");
  std::string decisions_text, audit_text, errors_text;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ImageSample& s = *samples[i];
    Slot& slot = slots[i];
    if (!slot.ann) {
      result.failures.push_back({s.id, slot.error});
      errors_text += nlohmann::json({{"v", 1}, {"id", s.id}, {"error", slot.error}}).dump() + "\n";
      continue;
    }
    const std::string stem = file_stem_for(s.id);
    EnsembleDecision& d = slot.ann->decision;
    const std::string mask_rel = "masks/" + stem + ".png";
    if (d.mask) write_mask_png(run_dir / mask_rel, *d.mask);

    std::map<std::string, fs::path> overlay_files;
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto& sal = slot.ann->saliency[m];
      if (!sal) continue;
      const fs::path p = run_dir / "overlays" / (stem + "_" + sal->model_id + ".png");
      write_png(p, overlay(slot.image->pixels, *sal));
      overlay_files[sal->model_id] = p;
    }
    if (d.verdict == Verdict::kFlagged) {
      spool.enqueue(d, s.path, overlay_files, config.positive_class);
      ++result.enqueued;
    }
    if (config.audit) {
      for (std::size_t m = 0; m < models.size(); ++m) {
        audit_text += nlohmann::json({{"v", 1},
                                      {"id", s.id},
                                      {"model_id", models[m].spec().name},
                                      {"per_pass_probs", slot.ann->predictions[m].per_pass_probs}})
                          .dump() +
                      "\n";
      }
    }
    decisions_text += decision_to_json(d, mask_rel).dump() + "\n";
    // Saliency is only needed for the masks; drop it to keep results small.
    for (auto& e : d.evidence) e.saliency.reset();
    result.decisions.push_back(std::move(d));
  }
  write_text(run_dir / "decisions.jsonl", decisions_text);
  write_text(run_dir / "errors.jsonl", errors_text);
  if (config.audit) write_text(run_dir / "audit.jsonl", audit_text);
  return result;
}

inline AnnotateResult annotate(const fs::path& run_dir, const DatasetManifest& manifest,
                               const PipelineConfig& config) {
  const auto models = load_ensemble(run_dir);
  return annotate_images(models, manifest, config, run_dir);
}

// --- evaluation ----------------------------------------------------------

// Applies exported review labels to Flagged decisions: Healthy/Diseased
// replace the verdict (a corrected mask, when present, becomes the mask);
// Reject leaves the image flagged. Returns the number of decisions changed.
inline std::size_t apply_review_labels(std::vector<EnsembleDecision>& decisions,
                                       const std::vector<nlohmann::json>& labels) {
  std::map<std::string, const nlohmann::json*> by_id;
  for (const auto& l : labels) by_id[l.at("id").get<std::string>()] = &l;
  std::size_t changed = 0;
  for (auto& d : decisions) {
    if (d.verdict != Verdict::kFlagged) continue;
    auto it = by_id.find(d.image_id);
    if (it == by_id.end()) continue;
    const auto& l = *it->second;
    const ReviewLabel label = parse_review_label(l.at("label").get<std::string>());
    if (label == ReviewLabel::kReject) continue;
    d.verdict = label == ReviewLabel::kDiseased ? Verdict::kDiseased : Verdict::kHealthy;
    d.reason = "expert review";
    d.mask.reset();
    if (label == ReviewLabel::kDiseased && l.contains("mask")) {
      d.mask = read_mask_png(l.at("mask").get<std::string>());
    }
    ++changed;
  }
  return changed;
}

inline std::vector<nlohmann::json> read_jsonl(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open " + file.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

inline void write_eval_report(const fs::path& run_dir, const EvalReport& report) {
  write_text(run_dir / "eval_report.json", to_json(report).dump(2) + "\n");
  std::string records;
  for (const auto& r : report.records) records += to_json(r).dump() + "\n";
  write_text(run_dir / "eval_records.jsonl", records);
}

}  // namespace aax

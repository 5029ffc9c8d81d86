#pragma once

// Dataset manifests, ingestion and the synthetic blob generator.
//
// Ground-truth geometry (boxes, mask_path) lives on ImageSample for
// evaluation only. Training never receives an ImageSample: it goes through
// training_records(), which copies out the path and the image-level label.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "aax/decision.hpp"
#include "aax/error.hpp"
#include "aax/image.hpp"
#include "aax/rng.hpp"

namespace aax {

namespace fs = std::filesystem;

// Half-open pixel rectangle [x1, x2) x [y1, y2).
struct Box {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

struct ImageSample {
  std::string id;
  fs::path path;
  int label = 0;
  std::optional<std::vector<Box>> boxes;
  std::optional<fs::path> mask_path;
};

enum class Split { kTrain, kVal, kTest };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw InputError("unknown split '" + s + "'");
}

struct DatasetManifest {
  std::vector<ImageSample> records;
  Split split = Split::kTest;
  std::vector<std::string> class_names = {"healthy", "diseased"};
  std::vector<std::string> skipped;  // records dropped during ingestion, with reason

  std::size_t warning_count() const noexcept { return skipped.size(); }

  const ImageSample* find(const std::string& id) const {
    for (const auto& r : records) {
      if (r.id == id) return &r;
    }
    return nullptr;
  }

  // Index of the Diseased/positive class: a class named "diseased" when
  // present, otherwise index 1.
  int positive_class() const {
    for (std::size_t i = 0; i < class_names.size(); ++i) {
      std::string n = class_names[i];
      std::transform(n.begin(), n.end(), n.begin(), ::tolower);
      if (n == "diseased") return static_cast<int>(i);
    }
    return 1;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.id).second) throw InputError("duplicate image id '" + r.id + "'");
      if (r.label < 0 || r.label >= static_cast<int>(class_names.size())) {
        throw InputError("label of '" + r.id + "' out of class range");
      }
    }
  }
};

// What the training code path is allowed to see.
struct TrainingRecord {
  fs::path path;
  int label = 0;
};

inline std::vector<TrainingRecord> training_records(const DatasetManifest& m) {
  std::vector<TrainingRecord> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) out.push_back({r.path, r.label});
  return out;
}

inline DatasetManifest strip_ground_truth(DatasetManifest m) {
  for (auto& r : m.records) {
    r.boxes.reset();
    r.mask_path.reset();
  }
  return m;
}

// --- manifest files (JSONL) ----------------------------------------------
//
// Optional header line: {"v":1,"class_names":[...],"split":"test"}
// Record lines:         {"id":..,"path":..,"label":<index|name>,
//                        "boxes":[[x1,y1,x2,y2],..]?, "mask":<path>?}
// Relative paths resolve against the manifest's directory.

inline nlohmann::json record_to_json(const ImageSample& r, const fs::path& base) {
  nlohmann::json j{{"id", r.id}, {"path", fs::relative(r.path, base).generic_string()},
                   {"label", r.label}};
  if (r.boxes) {
    auto arr = nlohmann::json::array();
    for (const auto& b : *r.boxes) arr.push_back({b.x1, b.y1, b.x2, b.y2});
    j["boxes"] = arr;
  }
  if (r.mask_path) j["mask"] = fs::relative(*r.mask_path, base).generic_string();
  return j;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path base = fs::absolute(file).parent_path();
  std::ofstream out(file, std::ios::trunc);
  out << nlohmann::json{{"v", 1}, {"class_names", m.class_names}, {"split", to_string(m.split)}}
             .dump()
      << "\n";
  for (const auto& r : m.records) {
    ImageSample abs = r;
    abs.path = fs::absolute(r.path);
    if (abs.mask_path) abs.mask_path = fs::absolute(*abs.mask_path);
    out << record_to_json(abs, base).dump() << "\n";
  }
  if (!out) throw Error("failed writing manifest " + file.string());
}

namespace detail {

inline bool decodes(const fs::path& p, std::string& why) {
  try {
    (void)read_png(p);
    return true;
  } catch (const InputError& e) {
    why = e.what();
    return false;
  }
}

inline int resolve_label(const nlohmann::json& j, const std::vector<std::string>& names) {
  if (j.is_number_integer()) return j.get<int>();
  const auto s = j.get<std::string>();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == s) return static_cast<int>(i);
  }
  throw InputError("unknown class name '" + s + "'");
}

}  // namespace detail

inline DatasetManifest read_manifest(const fs::path& file, bool check_images = true) {
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open manifest " + file.string());
  const fs::path base = fs::absolute(file).parent_path();
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      m.skipped.push_back("line " + std::to_string(lineno) + ": malformed JSON");
      continue;
    }
    if (j.contains("class_names")) {
      m.class_names = j.at("class_names").get<std::vector<std::string>>();
      if (j.contains("split")) m.split = parse_split(j.at("split").get<std::string>());
      continue;
    }
    ImageSample s;
    s.id = j.at("id").get<std::string>();
    s.path = base / j.at("path").get<std::string>();
    s.label = detail::resolve_label(j.at("label"), m.class_names);
    if (j.contains("boxes")) {
      std::vector<Box> boxes;
      for (const auto& b : j.at("boxes")) boxes.push_back({b.at(0), b.at(1), b.at(2), b.at(3)});
      s.boxes = std::move(boxes);
    }
    if (j.contains("mask") && !j.at("mask").is_null()) s.mask_path = base / j.at("mask").get<std::string>();
    if (check_images) {
      std::string why;
      if (!fs::exists(s.path)) {
        m.skipped.push_back(s.id + ": missing image " + s.path.string());
        continue;
      }
      if (!detail::decodes(s.path, why)) {
        m.skipped.push_back(s.id + ": " + why);
        continue;
      }
    }
    m.records.push_back(std::move(s));
  }
  m.validate();
  return m;
}

enum class IngestFormat { kFolderPerClass, kManifestFile };

inline IngestFormat parse_ingest_format(const std::string& s) {
  if (s == "folder" || s == "folder-per-class") return IngestFormat::kFolderPerClass;
  if (s == "manifest" || s == "manifest-file") return IngestFormat::kManifestFile;
  throw ConfigError("unknown ingest format '" + s + "'");
}

// Folder-per-class: root/<class>/<image>.png, class names sorted lexically.
// Manifest-file: root is a .jsonl manifest or a directory holding
// manifest.jsonl. Undecodable images are skipped and counted.
inline DatasetManifest ingest(const fs::path& root, IngestFormat format,
                              Split split = Split::kTrain) {
  if (!fs::exists(root)) throw IngestError("dataset root does not exist: " + root.string());
  DatasetManifest m;
  if (format == IngestFormat::kManifestFile) {
    m = read_manifest(fs::is_directory(root) ? root / "manifest.jsonl" : root);
  } else {
    m.split = split;
    m.class_names.clear();
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory()) m.class_names.push_back(e.path().filename().string());
    }
    std::sort(m.class_names.begin(), m.class_names.end());
    for (std::size_t c = 0; c < m.class_names.size(); ++c) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(root / m.class_names[c])) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        std::string why;
        const std::string id = m.class_names[c] + "/" + f.stem().string();
        if (!detail::decodes(f, why)) {
          m.skipped.push_back(id + ": " + why);
          continue;
        }
        m.records.push_back({id, f, static_cast<int>(c), std::nullopt, std::nullopt});
      }
    }
    m.validate();
  }
  if (m.records.empty()) {
    throw IngestError("no decodable images under " + root.string() + " (" +
                      std::to_string(m.skipped.size()) + " skipped)");
  }
  return m;
}

// --- synthetic blob data ---------------------------------------------------

struct SynthOptions {
  int n_val = 0;
  double blob_radius = 8.0;   // ground-truth footprint radius in pixels
  double blob_amplitude_lo = 0.45;
  double blob_amplitude_hi = 0.7;
  double background = 0.25;
  double noise_std = 0.08;
};

struct SynthSets {
  DatasetManifest train;
  DatasetManifest val;  // empty unless n_val > 0
  DatasetManifest test;
};

struct SynthImage {
  Tensor pixels;  // 1 x size x size in [0,1]
  std::optional<BinaryMask> mask;
};

// Healthy: background plus Gaussian noise. Diseased: the same plus one
// Gaussian blob whose footprint (pixel centers within blob_radius of the
// center) is the ground-truth mask. The blob lies fully inside the image.
inline SynthImage synth_image(int size, bool diseased, std::uint64_t seed,
                              const SynthOptions& opt = {}) {
  Rng rng(seed);
  SynthImage img;
  img.pixels = Tensor(Shape{1, size, size});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = opt.background + opt.noise_std * rng.normal();
  }
  if (diseased) {
    const double r = opt.blob_radius;
    const double lo = std::ceil(r), hi = size - 1 - std::ceil(r);
    const double cy = std::floor(rng.uniform(lo, hi + 1));
    const double cx = std::floor(rng.uniform(lo, hi + 1));
    const double amp = rng.uniform(opt.blob_amplitude_lo, opt.blob_amplitude_hi);
    const double sigma = r / 1.5;
    BinaryMask mask(size, size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        img.pixels.at(0, y, x) += amp * std::exp(-d2 / (2 * sigma * sigma));
        if (d2 <= r * r) mask.at(y, x) = 1;
      }
    }
    img.mask = std::move(mask);
  }
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = std::clamp(img.pixels[i], 0.0, 1.0);
  }
  return img;
}

inline DatasetManifest synth_split(const fs::path& dir, Split split, int n, int image_size,
                                   std::uint64_t seed, const SynthOptions& opt) {
  DatasetManifest m;
  m.split = split;
  m.class_names = {"healthy", "diseased"};
  const std::string name = to_string(split);
  const fs::path img_dir = dir / name;
  fs::create_directories(img_dir / "images");
  fs::create_directories(img_dir / "masks");
  for (int i = 0; i < n; ++i) {
    const bool diseased = (i % 2) == 1;
    char idbuf[64];
    std::snprintf(idbuf, sizeof idbuf, "%s_%05d", name.c_str(), i);
    const std::string id = idbuf;
    const auto img = synth_image(image_size, diseased,
                                 derive_seed(seed, static_cast<std::uint64_t>(split), i), opt);
    ImageSample s;
    s.id = id;
    s.path = img_dir / "images" / (id + ".png");
    s.label = diseased ? 1 : 0;
    write_png(s.path, img.pixels);
    if (img.mask) {
      s.mask_path = img_dir / "masks" / (id + ".png");
      write_mask_png(*s.mask_path, *img.mask);
    }
    m.records.push_back(std::move(s));
  }
  write_manifest(m, img_dir / "manifest.jsonl");
  return m;
}

// Deterministic for a given seed; classes alternate so each split is 50/50
// (odd sizes get the extra image in Healthy).
inline SynthSets synth_dataset(int n_train, int n_test, int image_size, std::uint64_t seed,
                               const fs::path& dir, const SynthOptions& opt = {}) {
  if (n_train < 1 || n_test < 1) throw InputError("synth_dataset: sizes must be >= 1");
  if (image_size < 2 * static_cast<int>(std::ceil(opt.blob_radius)) + 2) {
    throw InputError("synth_dataset: image too small for the blob radius");
  }
  SynthSets sets;
  sets.train = synth_split(dir, Split::kTrain, n_train, image_size, seed, opt);
  if (opt.n_val > 0) sets.val = synth_split(dir, Split::kVal, opt.n_val, image_size, seed, opt);
  sets.test = synth_split(dir, Split::kTest, n_test, image_size, seed, opt);
  return sets;
}

}  // namespace aax

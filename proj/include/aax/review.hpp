#pragma once

// Durable queue of flagged cases awaiting an expert verdict.
//
// State lives in memory and is reconstructed on open from snapshot.json plus
// an append-only journal.jsonl. Every mutation is appended and fsync'd
// before it is applied and acknowledged. All mutations hold one exclusive
// lock, which also makes the pending -> resolved transition a per-item
// compare-and-set.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "aax/decision.hpp"
#include "aax/error.hpp"
#include "aax/rng.hpp"

namespace aax {

namespace fs = std::filesystem;

enum class ReviewLabel { kHealthy, kDiseased, kReject };

inline std::string to_string(ReviewLabel l) {
  switch (l) {
    case ReviewLabel::kHealthy: return "Healthy";
    case ReviewLabel::kDiseased: return "Diseased";
    case ReviewLabel::kReject: return "Reject";
  }
  return "?";
}

inline ReviewLabel parse_review_label(const std::string& s) {
  if (s == "Healthy") return ReviewLabel::kHealthy;
  if (s == "Diseased") return ReviewLabel::kDiseased;
  if (s == "Reject") return ReviewLabel::kReject;
  throw InputError("unknown review label '" + s + "' (expected Healthy, Diseased or Reject)");
}

struct ReviewVerdict {
  std::string item_id;
  ReviewLabel label = ReviewLabel::kReject;
  std::optional<std::string> corrected_mask;  // asset path relative to the store
  std::string reviewer;
  std::int64_t submitted_at = 0;  // microseconds since the Unix epoch

  // Timestamps are excluded: a resubmission is identical if its content is.
  bool same_content(const ReviewVerdict& o) const {
    return item_id == o.item_id && label == o.label && corrected_mask == o.corrected_mask &&
           reviewer == o.reviewer;
  }
};

struct ModelEvidence {
  std::string model_id;
  double p_diseased = 0.0;
  double uncertainty = 0.0;
  friend bool operator==(const ModelEvidence&, const ModelEvidence&) = default;
};

enum class ReviewStatus { kPending, kResolved };

struct ReviewItem {
  std::string item_id;
  std::string image_id;
  std::optional<std::string> image;                 // asset path relative to the store
  std::map<std::string, std::string> overlays;      // model_id -> asset path
  std::vector<ModelEvidence> models;
  std::string reason;
  ReviewStatus status = ReviewStatus::kPending;
  std::int64_t created_at = 0;
  std::optional<ReviewVerdict> verdict;
};

inline nlohmann::json to_json(const ReviewVerdict& v) {
  nlohmann::json j{{"item_id", v.item_id},
                   {"label", to_string(v.label)},
                   {"reviewer", v.reviewer},
                   {"submitted_at", v.submitted_at}};
  j["corrected_mask"] = v.corrected_mask ? nlohmann::json(*v.corrected_mask) : nlohmann::json();
  return j;
}

inline ReviewVerdict verdict_from_json(const nlohmann::json& j) {
  ReviewVerdict v;
  v.item_id = j.at("item_id").get<std::string>();
  v.label = parse_review_label(j.at("label").get<std::string>());
  v.reviewer = j.value("reviewer", std::string{});
  v.submitted_at = j.value("submitted_at", std::int64_t{0});
  if (j.contains("corrected_mask") && !j.at("corrected_mask").is_null()) {
    v.corrected_mask = j.at("corrected_mask").get<std::string>();
  }
  return v;
}

inline nlohmann::json to_json(const ReviewItem& it) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : it.models) {
    models.push_back({{"model_id", m.model_id}, {"p", m.p_diseased}, {"u", m.uncertainty}});
  }
  nlohmann::json j{{"item_id", it.item_id},
                   {"image_id", it.image_id},
                   {"overlays", it.overlays},
                   {"models", models},
                   {"reason", it.reason},
                   {"status", it.status == ReviewStatus::kPending ? "pending" : "resolved"},
                   {"created_at", it.created_at}};
  j["image"] = it.image ? nlohmann::json(*it.image) : nlohmann::json();
  j["verdict"] = it.verdict ? to_json(*it.verdict) : nlohmann::json();
  return j;
}

inline ReviewItem item_from_json(const nlohmann::json& j) {
  ReviewItem it;
  it.item_id = j.at("item_id").get<std::string>();
  it.image_id = j.at("image_id").get<std::string>();
  if (j.contains("image") && !j.at("image").is_null()) it.image = j.at("image").get<std::string>();
  it.overlays = j.value("overlays", std::map<std::string, std::string>{});
  for (const auto& m : j.at("models")) {
    it.models.push_back({m.at("model_id").get<std::string>(), m.at("p").get<double>(),
                         m.at("u").get<double>()});
  }
  it.reason = j.value("reason", std::string{});
  it.status = j.value("status", std::string{"pending"}) == "resolved" ? ReviewStatus::kResolved
                                                                      : ReviewStatus::kPending;
  it.created_at = j.at("created_at").get<std::int64_t>();
  if (j.contains("verdict") && !j.at("verdict").is_null()) it.verdict = verdict_from_json(j.at("verdict"));
  return it;
}

// URL-safe item id derived from the image id; ids needing sanitization get a
// hash suffix so distinct images cannot collide.
inline std::string item_id_for(const std::string& image_id) {
  std::string out;
  bool changed = image_id.empty();
  for (char c : image_id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
    changed |= !ok;
  }
  if (changed) {
    char buf[10];
    std::snprintf(buf, sizeof buf, "-%08x", static_cast<unsigned>(fnv1a(image_id) & 0xffffffffu));
    out += buf;
  }
  return out;
}

struct SubmitResult {
  ReviewItem item;
  bool created = false;  // false: identical verdict already recorded
};

struct Page {
  std::vector<ReviewItem> items;
  std::size_t total = 0;
};

class ReviewStore {
 public:
  struct Options {
    // Compact the journal into the snapshot after this many entries; 0 never.
    std::size_t compact_every = 512;
  };

  explicit ReviewStore(fs::path dir) : ReviewStore(std::move(dir), Options{}) {}

  ReviewStore(fs::path dir, Options opt) : dir_(std::move(dir)), opt_(opt) {
    fs::create_directories(dir_ / "assets");
    load_snapshot();
    replay_journal();
    fd_ = ::open(journal_path().c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open review journal " + journal_path().string());
  }

  ~ReviewStore() {
    if (fd_ >= 0) ::close(fd_);
  }
  ReviewStore(const ReviewStore&) = delete;
  ReviewStore& operator=(const ReviewStore&) = delete;

  const fs::path& dir() const noexcept { return dir_; }
  fs::path journal_path() const { return dir_ / "journal.jsonl"; }
  fs::path snapshot_path() const { return dir_ / "snapshot.json"; }

  // Persists a pending item for a Flagged decision. Re-enqueueing an image
  // already present returns the existing item unchanged. Asset files are
  // copied into the store before the journal entry is written.
  ReviewItem enqueue(const EnsembleDecision& d, const std::optional<fs::path>& image_png = {},
                     const std::map<std::string, fs::path>& overlay_pngs = {},
                     int positive_class = 1) {
    if (d.verdict != Verdict::kFlagged) {
      throw ContractError("only Flagged decisions can be enqueued for review (got " +
                          to_string(d.verdict) + ")");
    }
    std::unique_lock lock(mu_);
    const std::string id = item_id_for(d.image_id);
    if (auto it = items_.find(id); it != items_.end()) return it->second;

    ReviewItem item;
    item.item_id = id;
    item.image_id = d.image_id;
    item.reason = d.reason;
    for (const auto& e : d.evidence) {
      item.models.push_back({e.model_id, e.mean_probs.at(positive_class), e.uncertainty});
    }
    const fs::path asset_dir = fs::path("assets") / id;
    if (image_png || !overlay_pngs.empty()) fs::create_directories(dir_ / asset_dir);
    if (image_png) {
      copy_asset(*image_png, asset_dir / "image.png");
      item.image = (asset_dir / "image.png").generic_string();
    }
    for (const auto& [model, path] : overlay_pngs) {
      const auto rel = asset_dir / ("overlay_" + model + ".png");
      copy_asset(path, rel);
      item.overlays[model] = rel.generic_string();
    }
    item.created_at = next_timestamp();
    append({{"v", 1}, {"op", "enqueue"}, {"item", to_json(item)}});
    apply_enqueue(item);
    maybe_compact();
    return item;
  }

  std::optional<ReviewItem> find(const std::string& item_id) const {
    std::shared_lock lock(mu_);
    auto it = items_.find(item_id);
    if (it == items_.end()) return std::nullopt;
    return it->second;
  }

  ReviewItem get_item(const std::string& item_id) const {
    auto it = find(item_id);
    if (!it) throw NotFound("unknown review item '" + item_id + "'");
    return *it;
  }

  // Pending items ordered by (created_at, item_id).
  Page list_pending(std::size_t limit, std::size_t offset = 0) const {
    std::shared_lock lock(mu_);
    std::vector<const ReviewItem*> pending;
    for (const auto& [id, it] : items_) {
      if (it.status == ReviewStatus::kPending) pending.push_back(&it);
    }
    std::sort(pending.begin(), pending.end(), [](const ReviewItem* a, const ReviewItem* b) {
      return std::tie(a->created_at, a->item_id) < std::tie(b->created_at, b->item_id);
    });
    Page page;
    page.total = pending.size();
    for (std::size_t i = offset; i < pending.size() && page.items.size() < limit; ++i) {
      page.items.push_back(*pending[i]);
    }
    return page;
  }

  // Resolves a pending item. An identical resubmission succeeds without a
  // state change (an idempotency note is journaled); a different verdict on a
  // resolved item raises Conflict.
  SubmitResult submit_verdict(ReviewVerdict v) {
    std::unique_lock lock(mu_);
    auto it = items_.find(v.item_id);
    if (it == items_.end()) throw NotFound("unknown review item '" + v.item_id + "'");
    ReviewItem& item = it->second;
    if (item.status == ReviewStatus::kResolved) {
      if (item.verdict && item.verdict->same_content(v)) {
        append({{"v", 1}, {"op", "note"}, {"kind", "idempotent_verdict"}, {"item_id", v.item_id}});
        maybe_compact();
        return {item, false};
      }
      throw Conflict("item '" + v.item_id + "' already resolved as " +
                     to_string(item.verdict->label));
    }
    if (v.submitted_at == 0) v.submitted_at = next_timestamp();
    append({{"v", 1}, {"op", "verdict"}, {"verdict", to_json(v)}});
    apply_verdict(v);
    maybe_compact();
    return {item, true};
  }

  // One {v, id, item_id, label, mask?} record per resolved item, ordered by
  // (created_at, item_id).
  std::vector<nlohmann::json> export_labels() const {
    std::shared_lock lock(mu_);
    std::vector<const ReviewItem*> done;
    for (const auto& [id, it] : items_) {
      if (it.status == ReviewStatus::kResolved) done.push_back(&it);
    }
    std::sort(done.begin(), done.end(), [](const ReviewItem* a, const ReviewItem* b) {
      return std::tie(a->created_at, a->item_id) < std::tie(b->created_at, b->item_id);
    });
    std::vector<nlohmann::json> out;
    for (const auto* it : done) {
      nlohmann::json j{{"v", 1},
                       {"id", it->image_id},
                       {"item_id", it->item_id},
                       {"label", to_string(it->verdict->label)},
                       {"reviewer", it->verdict->reviewer}};
      if (it->verdict->corrected_mask) {
        j["mask"] = (dir_ / *it->verdict->corrected_mask).generic_string();
      }
      out.push_back(std::move(j));
    }
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return items_.size();
  }

  // Whole-state dump used to compare stores (e.g. after a replay).
  nlohmann::json state() const {
    std::shared_lock lock(mu_);
    return state_locked();
  }

  // Rewrites snapshot.json from the current state and truncates the journal.
  // Replaying a journal over a snapshot that already contains its effects is
  // harmless because every operation is idempotent.
  void compact() {
    std::unique_lock lock(mu_);
    compact_locked();
  }

  fs::path asset_path(const std::string& rel) const { return dir_ / rel; }

  // Writes bytes as an asset of the item (e.g. an uploaded corrected mask)
  // and returns the store-relative path.
  std::string store_asset(const std::string& item_id, const std::string& name,
                          const std::string& bytes) {
    const fs::path rel = fs::path("assets") / item_id / name;
    fs::create_directories(dir_ / rel.parent_path());
    write_durably(dir_ / rel, bytes);
    return rel.generic_string();
  }

 private:
  nlohmann::json state_locked() const {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& [id, it] : items_) items.push_back(to_json(it));
    return {{"v", 1}, {"items", items}, {"last_timestamp", last_ts_}};
  }

  static void write_durably(const fs::path& path, const std::string& bytes) {
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error("cannot write " + path.string());
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
      if (n <= 0) {
        ::close(fd);
        throw Error("write failed for " + path.string());
      }
      off += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
  }

  void copy_asset(const fs::path& src, const fs::path& rel) {
    std::ifstream in(src, std::ios::binary);
    if (!in) throw InputError("review asset not found: " + src.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    write_durably(dir_ / rel, ss.str());
  }

  std::int64_t next_timestamp() {
    const auto now = std::chrono::duration_cast<std::chrono::microseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    last_ts_ = std::max<std::int64_t>(now, last_ts_ + 1);
    return last_ts_;
  }

  void append(const nlohmann::json& entry) {
    const std::string line = entry.dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
      if (n <= 0) throw Error("review journal write failed");
      off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw Error("review journal fsync failed");
    ++entries_since_compact_;
  }

  // Called only after the appended entry has been applied in memory, so the
  // snapshot always contains everything the truncated journal held.
  void maybe_compact() {
    if (opt_.compact_every > 0 && entries_since_compact_ >= opt_.compact_every) compact_locked();
  }

  void apply_enqueue(const ReviewItem& item) {
    items_.try_emplace(item.item_id, item);
    last_ts_ = std::max(last_ts_, item.created_at);
  }

  void apply_verdict(const ReviewVerdict& v) {
    auto it = items_.find(v.item_id);
    if (it == items_.end() || it->second.status == ReviewStatus::kResolved) return;
    it->second.status = ReviewStatus::kResolved;
    it->second.verdict = v;
    last_ts_ = std::max(last_ts_, v.submitted_at);
  }

  void load_snapshot() {
    std::ifstream in(snapshot_path());
    if (!in) return;
    const auto snap = nlohmann::json::parse(in);
    for (const auto& j : snap.at("items")) {
      ReviewItem it = item_from_json(j);
      items_.emplace(it.item_id, std::move(it));
    }
    last_ts_ = snap.value("last_timestamp", std::int64_t{0});
  }

  // Applies every complete journal line. A torn final line (a crash during
  // append, before acknowledgment) is discarded and truncated away.
  void replay_journal() {
    std::ifstream in(journal_path(), std::ios::binary);
    if (!in) return;
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string data = ss.str();
    std::size_t pos = 0, good_end = 0;
    while (pos < data.size()) {
      const std::size_t nl = data.find('\n', pos);
      if (nl == std::string::npos) break;
      const std::string line = data.substr(pos, nl - pos);
      pos = nl + 1;
      nlohmann::json entry;
      try {
        entry = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        break;
      }
      const auto op = entry.value("op", std::string{});
      if (op == "enqueue") apply_enqueue(item_from_json(entry.at("item")));
      else if (op == "verdict") apply_verdict(verdict_from_json(entry.at("verdict")));
      good_end = pos;
      ++entries_since_compact_;
    }
    if (good_end < data.size()) fs::resize_file(journal_path(), good_end);
  }

  void compact_locked() {
    const fs::path tmp = dir_ / "snapshot.json.tmp";
    write_durably(tmp, state_locked().dump() + "\n");
    fs::rename(tmp, snapshot_path());
    if (const int dfd = ::open(dir_.c_str(), O_RDONLY | O_DIRECTORY); dfd >= 0) {
      ::fsync(dfd);
      ::close(dfd);
    }
    if (::ftruncate(fd_, 0) != 0) throw Error("review journal truncate failed");
    ::fsync(fd_);
    entries_since_compact_ = 0;
  }

  fs::path dir_;
  Options opt_;
  mutable std::shared_mutex mu_;
  std::map<std::string, ReviewItem> items_;
  std::int64_t last_ts_ = 0;
  std::size_t entries_since_compact_ = 0;
  int fd_ = -1;
};

}  // namespace aax

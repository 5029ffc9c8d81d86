#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "aax/evaluation.hpp"
#include "aax/rng.hpp"

namespace aax {
namespace {

BinaryMask mask(int h, int w, std::initializer_list<std::pair<int, int>> on) {
  BinaryMask m(h, w);
  for (auto [y, x] : on) m.at(y, x) = 1;
  return m;
}

TEST(ClassificationMetrics, DirectFormula) {
  const auto m = classification_metrics({2, 1, 1, 6});
  EXPECT_DOUBLE_EQ(m.accuracy, 0.8);
  EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
  EXPECT_TRUE(m.degeneracies.empty());
}

TEST(ClassificationMetrics, Perfect) {
  const auto m = classification_metrics({5, 0, 0, 4});
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.f1, 1.0);
}

TEST(ClassificationMetrics, DegenerateConvention) {
  const auto m = classification_metrics({0, 0, 3, 7});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.7);
  EXPECT_EQ(m.degeneracies.size(), 2u);
}

TEST(ClassificationMetrics, AllZeroIsError) {
  EXPECT_THROW(classification_metrics({0, 0, 0, 0}), InputError);
}

TEST(Iou, Examples) {
  const BinaryMask a = mask(2, 2, {{0, 0}, {0, 1}});
  const BinaryMask b = mask(2, 2, {{0, 1}, {1, 1}});
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(mask(2, 2, {{0, 0}}), mask(2, 2, {{1, 1}})), 0.0);
  EXPECT_EQ(iou(BinaryMask(3, 3), BinaryMask(3, 3)), 1.0);
  EXPECT_THROW(iou(BinaryMask(2, 2), BinaryMask(2, 3)), InputError);
}

TEST(Iou, SymmetricAndAgreesWithConfusionFormula) {
  Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    const int h = 1 + static_cast<int>(rng.below(6)), w = 1 + static_cast<int>(rng.below(6));
    BinaryMask a(h, w), b(h, w);
    for (auto& v : a.values) v = rng.uniform() < 0.4;
    for (auto& v : b.values) v = rng.uniform() < 0.4;
    EXPECT_EQ(iou(a, b), iou(b, a));
    const auto c = pixel_confusion(a, b);
    const double denom = static_cast<double>(c.tp + c.fp + c.fn);
    const double via_counts = denom == 0 ? 1.0 : static_cast<double>(c.tp) / denom;
    EXPECT_NEAR(iou(a, b), via_counts, 1e-12);
    EXPECT_GE(iou(a, b), 0.0);
    EXPECT_LE(iou(a, b), 1.0);
  }
}

TEST(BoxesToMask, Examples) {
  EXPECT_EQ(boxes_to_mask({{0, 0, 4, 3}}, 3, 4).positive_pixel_count(), 12u);
  EXPECT_EQ(boxes_to_mask({}, 3, 4).positive_pixel_count(), 0u);
  EXPECT_EQ(boxes_to_mask({{0, 0, 2, 2}, {1, 1, 3, 3}}, 4, 4).positive_pixel_count(), 7u);
}

TEST(BoxesToMask, ClipsAndBoundsUnion) {
  const BinaryMask m = boxes_to_mask({{-2, -2, 2, 2}, {3, 3, 9, 9}}, 4, 4);
  EXPECT_EQ(m.positive_pixel_count(), 5u);
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    std::vector<Box> boxes;
    std::size_t area = 0;
    for (int k = 0; k < 3; ++k) {
      const int x1 = static_cast<int>(rng.below(6)), y1 = static_cast<int>(rng.below(6));
      const int x2 = x1 + 1 + static_cast<int>(rng.below(4));
      const int y2 = y1 + 1 + static_cast<int>(rng.below(4));
      boxes.push_back({x1, y1, x2, y2});
      area += static_cast<std::size_t>(x2 - x1) * (y2 - y1);
    }
    EXPECT_LE(boxes_to_mask(boxes, 12, 12).positive_pixel_count(), area);
  }
}

TEST(BoxesToMask, InvertedBoxNamed) {
  try {
    boxes_to_mask({{0, 0, 1, 1}, {5, 2, 3, 4}}, 8, 8);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("(5,2,3,4)"), std::string::npos);
  }
}

EnsembleDecision dec(const std::string& id, Verdict v, std::optional<BinaryMask> m = {}) {
  EnsembleDecision d;
  d.image_id = id;
  d.verdict = v;
  d.mask = std::move(m);
  d.reason = v == Verdict::kFlagged ? "2 models above theta" : "";
  for (const char* model : {"a", "b", "c"}) d.evidence.push_back({model, {0.4, 0.6}, 0.05, {}});
  return d;
}

ImageSample sample(const std::string& id, int label, std::optional<std::vector<Box>> boxes = {}) {
  ImageSample s;
  s.id = id;
  s.path = id + ".png";
  s.label = label;
  s.boxes = std::move(boxes);
  return s;
}

// Ten hand-built decisions. Counts over the eight unflagged ones:
// tp = d0 d1 d2, fp = d3, fn = d4, tn = d5 d6 d9. IoU: d0 = 1/3, d1 = 1,
// d3 = 0 (empty truth), d2 has no geometry.
TEST(EvaluateDataset, TenDecisionFixture) {
  DatasetManifest truth;
  truth.records = {sample("d0", 1, std::vector<Box>{{1, 0, 2, 2}}),
                   sample("d1", 1, std::vector<Box>{{0, 0, 2, 2}}),
                   sample("d2", 1),
                   sample("d3", 0, std::vector<Box>{}),
                   sample("d4", 1, std::vector<Box>{{0, 0, 1, 1}}),
                   sample("d5", 0),
                   sample("d6", 0),
                   sample("d7", 0),
                   sample("d8", 1, std::vector<Box>{{0, 0, 1, 1}}),
                   sample("d9", 0)};
  const std::vector<EnsembleDecision> ds = {
      dec("d0", Verdict::kDiseased, mask(2, 2, {{0, 0}, {0, 1}})),
      dec("d1", Verdict::kDiseased, mask(2, 2, {{0, 0}, {0, 1}, {1, 0}, {1, 1}})),
      dec("d2", Verdict::kDiseased, mask(2, 2, {{1, 1}})),
      dec("d3", Verdict::kDiseased, mask(2, 2, {{0, 0}})),
      dec("d4", Verdict::kHealthy),
      dec("d5", Verdict::kHealthy),
      dec("d6", Verdict::kHealthy),
      dec("d7", Verdict::kFlagged),
      dec("d8", Verdict::kFlagged),
      dec("d9", Verdict::kHealthy)};
  const EvalReport r = evaluate_dataset(ds, truth);
  EXPECT_EQ(r.n_images, 10u);
  EXPECT_EQ(r.n_flagged, 2u);
  EXPECT_DOUBLE_EQ(r.flag_rate, 0.2);
  EXPECT_EQ(r.counts, (ConfusionCounts{3, 1, 1, 3}));
  ASSERT_TRUE(r.classification);
  EXPECT_DOUBLE_EQ(r.classification->accuracy, 0.75);
  EXPECT_DOUBLE_EQ(r.classification->precision, 0.75);
  EXPECT_DOUBLE_EQ(r.classification->recall, 0.75);
  EXPECT_DOUBLE_EQ(r.classification->f1, 0.75);
  EXPECT_EQ(r.n_iou, 3u);
  ASSERT_TRUE(r.mean_iou);
  EXPECT_NEAR(*r.mean_iou, 4.0 / 9.0, 1e-15);
  ASSERT_EQ(r.records.size(), 10u);
  EXPECT_NEAR(*r.records[0].iou, 1.0 / 3.0, 1e-15);
  EXPECT_FALSE(r.records[2].iou.has_value());
  EXPECT_EQ(*r.records[7].flagged_reason, "2 models above theta");
  EXPECT_EQ(r.records[3].p_per_model, (std::vector<double>{0.6, 0.6, 0.6}));

  const auto j = to_json(r.records[0]);
  for (const char* k : {"id", "verdict", "p_per_model", "u_per_model", "iou"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_FALSE(j.contains("flagged_reason"));
  EXPECT_EQ(to_json(r).at("v"), 1);
}

TEST(EvaluateDataset, AllCorrectNoFlags) {
  DatasetManifest truth;
  truth.records = {sample("x", 0), sample("y", 1)};
  const auto r = evaluate_dataset({dec("x", Verdict::kHealthy), dec("y", Verdict::kDiseased)},
                                  truth);
  EXPECT_EQ(r.classification->accuracy, 1.0);
  EXPECT_EQ(r.flag_rate, 0.0);
  EXPECT_FALSE(r.mean_iou.has_value());
}

TEST(EvaluateDataset, AllFlaggedIsNotApplicable) {
  DatasetManifest truth;
  truth.records = {sample("x", 0), sample("y", 1)};
  const auto r = evaluate_dataset({dec("x", Verdict::kFlagged), dec("y", Verdict::kFlagged)},
                                  truth);
  EXPECT_EQ(r.flag_rate, 1.0);
  EXPECT_FALSE(r.classification.has_value());
  const auto j = to_json(r);
  EXPECT_TRUE(j.at("accuracy").is_null());
  EXPECT_TRUE(j.contains("classification_note"));
}

TEST(EvaluateDataset, MissingIdsListed) {
  DatasetManifest truth;
  truth.records = {sample("x", 0)};
  try {
    evaluate_dataset({dec("x", Verdict::kHealthy), dec("ghost1", Verdict::kHealthy),
                      dec("ghost2", Verdict::kHealthy)},
                     truth);
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("ghost1"), std::string::npos);
    EXPECT_NE(msg.find("ghost2"), std::string::npos);
  }
}

}  // namespace
}  // namespace aax

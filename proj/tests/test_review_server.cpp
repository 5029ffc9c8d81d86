#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <gtest/gtest.h>

#include "aax/image.hpp"
#include "aax/review_server.hpp"
#include "test_util.hpp"

namespace aax {
namespace {

using nlohmann::json;
using testing::TempDir;

std::string b64(const std::string& in) {
  static const char* t = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const unsigned n = (static_cast<unsigned char>(in[i]) << 16) |
                       (static_cast<unsigned char>(in[i + 1]) << 8) |
                       static_cast<unsigned char>(in[i + 2]);
    for (int s : {18, 12, 6, 0}) out.push_back(t[(n >> s) & 63]);
  }
  if (i < in.size()) {
    unsigned n = static_cast<unsigned char>(in[i]) << 16;
    if (i + 1 < in.size()) n |= static_cast<unsigned char>(in[i + 1]) << 8;
    out.push_back(t[(n >> 18) & 63]);
    out.push_back(t[(n >> 12) & 63]);
    out.push_back(i + 1 < in.size() ? t[(n >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

EnsembleDecision flagged(const std::string& id) {
  EnsembleDecision d;
  d.image_id = id;
  d.verdict = Verdict::kFlagged;
  d.reason = "2 models above theta";
  d.evidence = {{"a", {0.3, 0.7}, 0.2, {}}, {"b", {0.6, 0.4}, 0.15, {}}, {"c", {0.5, 0.5}, 0.01, {}}};
  return d;
}

class ReviewApi : public ::testing::Test {
 protected:
  void SetUp() override {
    write_png(dir_ / "src/img.png", 2, 2, 1, {0, 60, 120, 180});
    write_png(dir_ / "src/ov_a.png", 2, 2, 3, std::vector<std::uint8_t>(12, 9));
    store_ = std::make_unique<ReviewStore>(dir_ / "store");
    store_->enqueue(flagged("one"), dir_ / "src/img.png", {{"a", dir_ / "src/ov_a.png"}});
    store_->enqueue(flagged("two"));
    store_->enqueue(flagged("three"));
    mount_review_api(server_, *store_, "secret");
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_bearer_token_auth("secret");
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  httplib::Result post_verdict(const std::string& id, json body) {
    return client_->Post("/api/items/" + id + "/verdict", body.dump(), "application/json");
  }

  TempDir dir_{"review_api"};
  std::unique_ptr<ReviewStore> store_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

TEST_F(ReviewApi, RejectsMissingOrWrongToken) {
  httplib::Client anon("127.0.0.1", port_);
  auto r = anon.Get("/api/queue");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 401);
  EXPECT_EQ(json::parse(r->body).at("v"), 1);
  anon.set_bearer_token_auth("wrong");
  r = anon.Get("/api/items/one");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 401);
}

TEST_F(ReviewApi, QueuePagination) {
  auto r = client_->Get("/api/queue?limit=2");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  const json page = json::parse(r->body);
  EXPECT_EQ(page.at("v"), 1);
  EXPECT_EQ(page.at("total"), 3);
  ASSERT_EQ(page.at("items").size(), 2u);
  EXPECT_EQ(page.at("items")[0].at("image_id"), "one");
  r = client_->Get("/api/queue?limit=2&offset=2");
  ASSERT_TRUE(r);
  EXPECT_EQ(json::parse(r->body).at("items").size(), 1u);
  r = client_->Get("/api/queue?limit=abc");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
}

TEST_F(ReviewApi, ItemDetailAndAssets) {
  auto r = client_->Get("/api/items/one");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  const json body = json::parse(r->body);
  EXPECT_EQ(body.at("v"), 1);
  EXPECT_EQ(body.at("item").at("models").size(), 3u);
  EXPECT_EQ(body.at("item").at("status"), "pending");

  r = client_->Get("/api/items/one/image.png");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(r->body, slurp(dir_ / "src/img.png"));

  r = client_->Get("/api/items/one/overlay/a.png");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, slurp(dir_ / "src/ov_a.png"));

  for (const char* path : {"/api/items/ghost", "/api/items/one/overlay/z.png",
                           "/api/items/two/image.png"}) {
    r = client_->Get(path);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 404) << path;
    EXPECT_EQ(json::parse(r->body).at("v"), 1) << path;
  }
}

TEST_F(ReviewApi, VerdictCreatedIdempotentConflict) {
  const json body = {{"v", 1}, {"label", "Healthy"}, {"reviewer", "ana"}};
  auto r = post_verdict("two", body);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  json j = json::parse(r->body);
  EXPECT_EQ(j.at("v"), 1);
  EXPECT_TRUE(j.at("created").get<bool>());
  EXPECT_EQ(j.at("item").at("status"), "resolved");

  r = post_verdict("two", body);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_FALSE(json::parse(r->body).at("created").get<bool>());

  r = post_verdict("two", {{"v", 1}, {"label", "Diseased"}, {"reviewer", "ana"}});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(json::parse(r->body).at("v"), 1);

  r = post_verdict("ghost", body);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);

  r = client_->Get("/api/queue");
  EXPECT_EQ(json::parse(r->body).at("total"), 2);
}

TEST_F(ReviewApi, BadBodiesAre400) {
  const std::vector<std::string> bodies = {
      "not json",
      json{{"label", "Healthy"}}.dump(),                  // missing v
      json{{"v", 2}, {"label", "Healthy"}}.dump(),        // wrong version
      json{{"v", 1}, {"label", "Sick"}}.dump(),           // unknown label
      json{{"v", 1}}.dump(),                              // missing label
      json{{"v", 1}, {"label", "Diseased"}, {"corrected_mask_png_base64", "@@@"}}.dump(),
      json{{"v", 1}, {"label", "Diseased"}, {"corrected_mask_png_base64", b64("GIF89a")}}.dump()};
  for (const auto& b : bodies) {
    auto r = client_->Post("/api/items/three/verdict", b, "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400) << b;
    EXPECT_EQ(json::parse(r->body).at("v"), 1) << b;
  }
  EXPECT_EQ(store_->get_item("three").status, ReviewStatus::kPending);
}

TEST_F(ReviewApi, CorrectedMaskStoredAndExported) {
  BinaryMask m(2, 2);
  m.at(1, 0) = 1;
  write_mask_png(dir_ / "mask.png", m);
  auto r = post_verdict("one", {{"v", 1},
                                {"label", "Diseased"},
                                {"reviewer", "bo"},
                                {"corrected_mask_png_base64", b64(slurp(dir_ / "mask.png"))}});
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 201);
  const auto rel = json::parse(r->body).at("item").at("verdict").at("corrected_mask");
  ASSERT_TRUE(rel.is_string());
  EXPECT_EQ(read_mask_png(store_->asset_path(rel.get<std::string>())), m);

  post_verdict("two", {{"v", 1}, {"label", "Reject"}, {"reviewer", "bo"}});
  r = client_->Get("/api/export");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "application/x-ndjson");
  std::istringstream lines(r->body);
  std::string line;
  std::vector<json> recs;
  while (std::getline(lines, line)) recs.push_back(json::parse(line));
  ASSERT_EQ(recs.size(), 2u);
  for (const auto& rec : recs) EXPECT_EQ(rec.at("v"), 1);
  EXPECT_EQ(recs[0].at("id"), "one");
  EXPECT_TRUE(recs[0].contains("mask"));
  EXPECT_EQ(recs[1].at("label"), "Reject");
}

TEST(ReviewApiOpen, EmptyTokenDisablesAuth) {
  TempDir dir("review_open");
  ReviewStore store(dir.path());
  store.enqueue(flagged("x"));
  httplib::Server server;
  mount_review_api(server, store, "");
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client c("127.0.0.1", port);
  auto r = c.Get("/api/queue");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  server.stop();
  t.join();
}

}  // namespace
}  // namespace aax

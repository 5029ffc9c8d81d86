#pragma once

// HTTP+JSON front of the review store.
//
//   GET  /api/queue?limit&offset
//   GET  /api/items/{id}
//   GET  /api/items/{id}/image.png
//   GET  /api/items/{id}/overlay/{model_id}.png
//   POST /api/items/{id}/verdict
//   GET  /api/export
//
// Every JSON payload carries "v": 1. Requests must send
// "Authorization: Bearer <token>" when a token is configured.

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "aax/error.hpp"
#include "aax/review.hpp"
#include "aax/rng.hpp"

namespace aax {

inline constexpr int kApiVersion = 1;

namespace detail {

inline std::string base64_decode(const std::string& in) {
  static const std::string chars =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  int val = 0, bits = -8;
  for (unsigned char c : in) {
    if (c == '=') break;
    const auto pos = chars.find(static_cast<char>(c));
    if (pos == std::string::npos) {
      if (std::isspace(c)) continue;
      throw InputError("invalid base64 payload");
    }
    val = (val << 6) + static_cast<int>(pos);
    bits += 6;
    if (bits >= 0) {
      out.push_back(static_cast<char>((val >> bits) & 0xff));
      bits -= 8;
    }
  }
  return out;
}

inline void send_json(httplib::Response& res, int status, nlohmann::json body) {
  body["v"] = kApiVersion;
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

inline bool send_file(httplib::Response& res, const fs::path& path, const char* type) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  res.status = 200;
  res.set_content(ss.str(), type);
  return true;
}

inline std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto s = req.get_param_value(key);
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw InputError(std::string("bad query parameter ") + key);
  return static_cast<std::size_t>(v);
}

inline nlohmann::json item_summary(const ReviewItem& it) {
  nlohmann::json j = to_json(it);
  j.erase("verdict");
  return j;
}

}  // namespace detail

// Registers the API routes on `server`. The store must outlive the server.
inline void mount_review_api(httplib::Server& server, ReviewStore& store, std::string token) {
  server.set_pre_routing_handler(
      [token](const httplib::Request& req, httplib::Response& res) {
        if (token.empty()) return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") != "Bearer " + token) {
          detail::send_error(res, 401, "missing or invalid token");
          return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
      });

  server.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
          std::rethrow_exception(ep);
        } catch (const NotFound& e) {
          detail::send_error(res, 404, e.what());
        } catch (const Conflict& e) {
          detail::send_error(res, 409, e.what());
        } catch (const InputError& e) {
          detail::send_error(res, 400, e.what());
        } catch (const nlohmann::json::exception& e) {
          detail::send_error(res, 400, std::string("malformed payload: ") + e.what());
        } catch (const std::invalid_argument& e) {
          detail::send_error(res, 400, e.what());
        } catch (const std::exception& e) {
          detail::send_error(res, 500, e.what());
        }
      });

  server.Get("/api/queue", [&store](const httplib::Request& req, httplib::Response& res) {
    const std::size_t limit = detail::query_size(req, "limit", 50);
    const std::size_t offset = detail::query_size(req, "offset", 0);
    const Page page = store.list_pending(limit, offset);
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : page.items) items.push_back(detail::item_summary(it));
    detail::send_json(res, 200,
                      {{"items", items}, {"total", page.total}, {"limit", limit}, {"offset", offset}});
  });

  server.Get(R"(/api/items/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
    detail::send_json(res, 200, {{"item", to_json(store.get_item(req.matches[1]))}});
  });

  server.Get(R"(/api/items/([^/]+)/image\.png)",
             [&store](const httplib::Request& req, httplib::Response& res) {
               const ReviewItem it = store.get_item(req.matches[1]);
               if (!it.image || !detail::send_file(res, store.asset_path(*it.image), "image/png")) {
                 detail::send_error(res, 404, "no image for item");
               }
             });

  server.Get(R"(/api/items/([^/]+)/overlay/([^/]+)\.png)",
             [&store](const httplib::Request& req, httplib::Response& res) {
               const ReviewItem it = store.get_item(req.matches[1]);
               const auto o = it.overlays.find(req.matches[2]);
               if (o == it.overlays.end() ||
                   !detail::send_file(res, store.asset_path(o->second), "image/png")) {
                 detail::send_error(res, 404, "no overlay for model");
               }
             });

  // Body: {"v":1,"label":"Healthy|Diseased|Reject","reviewer":"..",
  //        "corrected_mask_png_base64":".."?}
  server.Post(R"(/api/items/([^/]+)/verdict)",
              [&store](const httplib::Request& req, httplib::Response& res) {
                const std::string id = req.matches[1];
                const auto body = nlohmann::json::parse(req.body);
                if (body.value("v", 0) != kApiVersion) {
                  throw InputError("unsupported payload version");
                }
                (void)store.get_item(id);
                ReviewVerdict v;
                v.item_id = id;
                v.label = parse_review_label(body.at("label").get<std::string>());
                v.reviewer = body.value("reviewer", std::string{});
                if (body.contains("corrected_mask_png_base64")) {
                  const auto png = detail::base64_decode(
                      body.at("corrected_mask_png_base64").get<std::string>());
                  if (png.rfind("\x89PNG\r\n\x1a\n", 0) != 0) {
                    throw InputError("corrected mask is not a PNG");
                  }
                  const std::string name =
                      "corrected_mask_" + std::to_string(fnv1a(png) & 0xffffffffu) + ".png";
                  v.corrected_mask = store.store_asset(id, name, png);
                }
                const SubmitResult r = store.submit_verdict(v);
                detail::send_json(res, r.created ? 201 : 200,
                                  {{"item", to_json(r.item)}, {"created", r.created}});
              });

  server.Get("/api/export", [&store](const httplib::Request&, httplib::Response& res) {
    std::string body;
    for (const auto& rec : store.export_labels()) body += rec.dump() + "\n";
    res.status = 200;
    res.set_content(body, "application/x-ndjson");
  });
}

}  // namespace aax

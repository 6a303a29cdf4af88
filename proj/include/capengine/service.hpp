// SPDX-License-Identifier: Apache-2.0
//
// HTTP front end:
//
//   POST /v1/images                          raw bytes -> {image_id, width, height}
//   POST /v1/images/{id}/caption             caption request -> result + mask_id
//   POST /v1/images/{id}/chat                {session_id?, control?, message}
//   POST /v1/images/{id}/paragraph           paragraph options -> paragraph result
//   GET  /v1/images/{id}/masks/{mask_id}     RLE text
//   GET  /v1/images/{id}/chat/{session_id}   stored transcript
//   GET  /v1/healthz, GET /v1/metrics
//
// Errors are `{"error": <code>, "message": <text>}` with a mapped status.
#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "capengine/backends.hpp"
#include "capengine/chat.hpp"
#include "capengine/config.hpp"
#include "capengine/error.hpp"
#include "capengine/paragraph.hpp"
#include "capengine/pipeline.hpp"
#include "capengine/store.hpp"

namespace httplib {
class Server;
struct Request;
struct Response;
}  // namespace httplib

namespace capengine {

int http_status(ErrorCode code);

struct ServiceMetrics {
  std::uint64_t requests = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::size_t cache_entries = 0;
};

class Service {
 public:
  /// Opens (or creates) the store under config.store_root and replays saved
  /// sessions. Throws Config when the store is not writable. `log` receives
  /// one line per request; nullptr disables logging.
  Service(ServiceConfig config, BackendSet backends, std::ostream* log);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts serving on a background thread; returns the bound port
  /// (config port 0 picks a free one). Throws Config if binding fails.
  int start();
  /// Stops accepting, lets in-flight requests finish and joins the thread.
  void stop();
  /// Blocks until the server stops.
  void wait();

  int port() const { return port_; }
  ServiceMetrics metrics() const;

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  void install_routes();
  void handle_upload(const Req& req, Res& res);
  void handle_caption(const Req& req, Res& res);
  void handle_chat(const Req& req, Res& res);
  void handle_paragraph(const Req& req, Res& res);
  void handle_mask(const Req& req, Res& res);
  void handle_transcript(const Req& req, Res& res);
  void handle_healthz(const Req& req, Res& res);
  void handle_metrics(const Req& req, Res& res);

  std::shared_ptr<const RgbImage> require_image(const std::string& id);
  std::shared_ptr<const std::vector<BitMask>> cached_segments(const std::string& image_id,
                                                              const RgbImage& image);

  ServiceConfig config_;
  BackendSet backends_;
  std::ostream* log_;
  std::mutex log_mutex_;

  ImageStore images_;
  MaskStore masks_;
  SessionStore sessions_;
  CaptionPipeline pipeline_;
  ChatEngine chat_;
  ParagraphEngine paragraph_;

  mutable std::mutex cache_mutex_;
  mutable LruCache<std::string, std::shared_ptr<const std::vector<BitMask>>> segment_cache_;
  std::map<std::string, std::shared_ptr<std::mutex>> key_locks_;
  std::atomic<std::uint64_t> cache_hits_{0};
  std::atomic<std::uint64_t> cache_misses_{0};
  std::atomic<std::uint64_t> requests_{0};

  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace capengine

// SPDX-License-Identifier: Apache-2.0
#include "capengine/service.hpp"

#include <chrono>
#include <cstdio>
#include <future>
#include <ostream>

#include <httplib.h>

#include "capengine/text.hpp"
#include "capengine/wire.hpp"

namespace capengine {

namespace {

constexpr auto kProbeTimeout = std::chrono::milliseconds(300);
constexpr const char* kJson = "application/json";

thread_local std::chrono::steady_clock::time_point request_started;

const char* kIndexHtml =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>capengine</title></head>"
    "<body><p>capengine is running. The API lives under <code>/v1</code>.</p></body></html>\n";

void send_json(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  ojson body;
  body["error"] = std::string(to_string(code));
  body["message"] = message;
  send_json(res, http_status(code), body);
}

ojson parse_body(const httplib::Request& req) {
  if (req.body.empty()) return ojson::object();
  auto body = ojson::parse(req.body, nullptr, false);
  if (body.is_discarded()) throw Error(ErrorCode::kInvalidArgument, "request body is not valid JSON");
  if (!body.is_object()) throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object");
  return body;
}

bool optional_bool(const ojson& body, const char* name, bool fallback) {
  const auto it = body.find(name);
  if (it == body.end() || it->is_null()) return fallback;
  if (!it->is_boolean()) throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be a boolean");
  return it->get<bool>();
}

LanguageControls controls_field(const ojson& body) {
  const auto it = body.find("controls");
  return it == body.end() ? LanguageControls{} : controls_from_wire(*it);
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kEmptyControl:
    case ErrorCode::kDimsMismatch:
    case ErrorCode::kInvalidRle:
    case ErrorCode::kOutOfBounds:
      return 422;
    case ErrorCode::kUnknownImage:
    case ErrorCode::kUnknownSession:
    case ErrorCode::kUnknownMask:
      return 404;
    case ErrorCode::kSessionBusy:
      return 409;
    case ErrorCode::kUndecodable:
      return 415;
    case ErrorCode::kTooLarge:
      return 413;
    case ErrorCode::kEmptyMask:
    case ErrorCode::kNoCandidates:
    case ErrorCode::kNoMask:
    case ErrorCode::kEmptyCategory:
    case ErrorCode::kEmptyCaption:
    case ErrorCode::kRefusal:
    case ErrorCode::kBackendUnavailable:
    case ErrorCode::kMalformedResponse:
      return 502;
    case ErrorCode::kNoRegions:
    case ErrorCode::kConfig:
      return 500;
  }
  return 500;
}

Service::Service(ServiceConfig config, BackendSet backends, std::ostream* log)
    : config_(std::move(config)),
      backends_(std::move(backends)),
      log_(log),
      images_(config_.store_root),
      masks_(config_.store_root),
      sessions_(config_.store_root),
      pipeline_(backends_, pipeline_config(config_)),
      chat_(backends_.refiner, backends_.vqa, [this](const std::string& id) { return images_.get(id); },
            ChatConfig{config_.max_tool_calls, config_.margin_ratio}),
      paragraph_(pipeline_, ParagraphConfig{config_.parallelism, {}}),
      segment_cache_(config_.cache_size) {
  chat_.set_next_session_number(sessions_.load_all() + 1);
}

Service::~Service() { stop(); }

ServiceMetrics Service::metrics() const {
  ServiceMetrics m;
  m.requests = requests_.load();
  m.cache_hits = cache_hits_.load();
  m.cache_misses = cache_misses_.load();
  std::lock_guard lock(cache_mutex_);
  m.cache_entries = segment_cache_.size();
  return m;
}

int Service::start() {
  if (server_) return port_;
  server_ = std::make_unique<httplib::Server>();
  server_->set_payload_max_length(config_.max_upload_bytes);
  install_routes();

  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.host);
  } else {
    port_ = server_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ <= 0) {
    server_.reset();
    throw Error(ErrorCode::kConfig,
                "cannot listen on " + config_.host + ":" + std::to_string(config_.port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void Service::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void Service::wait() {
  if (thread_.joinable()) thread_.join();
}

void Service::install_routes() {
  auto& s = *server_;

  s.set_pre_routing_handler([](const Req&, Res&) {
    request_started = std::chrono::steady_clock::now();
    return httplib::Server::HandlerResponse::Unhandled;
  });
  s.set_logger([this](const Req& req, const Res& res) {
    ++requests_;
    if (!log_) return;
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              request_started)
                        .count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", ms);
    std::lock_guard lock(log_mutex_);
    *log_ << req.method << ' ' << req.path << ' ' << res.status << ' ' << buf << "ms\n" << std::flush;
  });
  s.set_exception_handler([](const Req&, Res& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const ojson::exception& e) {
      send_error(res, ErrorCode::kInvalidArgument, e.what());
    } catch (const std::exception& e) {
      send_error(res, ErrorCode::kConfig, e.what());
    }
  });
  s.set_error_handler([](const Req&, Res& res) {
    if (!res.body.empty()) return;
    switch (res.status) {
      case 404:
        send_error(res, ErrorCode::kInvalidArgument, "no such route");
        res.status = 404;
        break;
      case 413:
        send_error(res, ErrorCode::kTooLarge, "request body exceeds the upload limit");
        break;
      default:
        break;
    }
  });

  s.Post("/v1/images", [this](const Req& q, Res& r) { handle_upload(q, r); });
  s.Post(R"(/v1/images/([0-9a-zA-Z]+)/caption)", [this](const Req& q, Res& r) { handle_caption(q, r); });
  s.Post(R"(/v1/images/([0-9a-zA-Z]+)/chat)", [this](const Req& q, Res& r) { handle_chat(q, r); });
  s.Post(R"(/v1/images/([0-9a-zA-Z]+)/paragraph)", [this](const Req& q, Res& r) { handle_paragraph(q, r); });
  s.Get(R"(/v1/images/([0-9a-zA-Z]+)/masks/([0-9a-zA-Z]+))", [this](const Req& q, Res& r) { handle_mask(q, r); });
  s.Get(R"(/v1/images/([0-9a-zA-Z]+)/chat/([0-9a-zA-Z-]+))",
        [this](const Req& q, Res& r) { handle_transcript(q, r); });
  s.Get("/v1/healthz", [this](const Req& q, Res& r) { handle_healthz(q, r); });
  s.Get("/v1/metrics", [this](const Req& q, Res& r) { handle_metrics(q, r); });

  if (config_.static_root) {
    if (!s.set_mount_point("/", config_.static_root->string())) {
      throw Error(ErrorCode::kConfig, "static_root is not a directory: " + config_.static_root->string());
    }
  } else {
    s.Get("/", [](const Req&, Res& r) { r.set_content(kIndexHtml, "text/html"); });
  }
}

std::shared_ptr<const RgbImage> Service::require_image(const std::string& id) {
  auto image = images_.get(id);
  if (!image) throw Error(ErrorCode::kUnknownImage, "unknown image " + id);
  return image;
}

std::shared_ptr<const std::vector<BitMask>> Service::cached_segments(const std::string& image_id,
                                                                     const RgbImage& image) {
  std::shared_ptr<std::mutex> key_lock;
  {
    std::lock_guard lock(cache_mutex_);
    if (auto hit = segment_cache_.get(image_id)) {
      ++cache_hits_;
      return *hit;
    }
    auto& slot = key_locks_[image_id];
    if (!slot) slot = std::make_shared<std::mutex>();
    key_lock = slot;
  }

  // One segment_everything call per image even under concurrent requests.
  std::lock_guard per_key(*key_lock);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto hit = segment_cache_.get(image_id)) {
      ++cache_hits_;
      return *hit;
    }
  }
  ++cache_misses_;
  auto masks = std::make_shared<const std::vector<BitMask>>(paragraph_.segment_all(image));
  std::lock_guard lock(cache_mutex_);
  segment_cache_.put(image_id, masks);
  return masks;
}

void Service::handle_upload(const Req& req, Res& res) {
  if (req.body.size() > config_.max_upload_bytes) {
    throw Error(ErrorCode::kTooLarge, "request body exceeds the upload limit");
  }
  const auto stored = images_.put(
      std::span(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()));
  ojson out;
  out["image_id"] = stored.id;
  out["width"] = stored.dims.width;
  out["height"] = stored.dims.height;
  send_json(res, 200, out);
}

void Service::handle_caption(const Req& req, Res& res) {
  const auto image_id = req.matches[1].str();
  const auto body = parse_body(req);
  const auto image = require_image(image_id);

  const auto control = body.find("control");
  if (control == body.end()) throw Error(ErrorCode::kInvalidArgument, "missing field 'control'");

  CaptionRequest request;
  request.image_id = image_id;
  request.control = control_from_wire(*control);
  request.controls = controls_field(body);
  request.use_cot = optional_bool(body, "use_cot", true);
  request.refine = optional_bool(body, "refine", true);

  const auto result = pipeline_.caption_object(*image, request);
  ojson out;
  out["image_id"] = image_id;
  out["mask_id"] = masks_.put(image_id, result.mask);
  const auto wire = to_wire(result);
  for (const auto& [key, value] : wire.items()) out[key] = value;
  send_json(res, 200, out);
}

void Service::handle_chat(const Req& req, Res& res) {
  const auto image_id = req.matches[1].str();
  const auto body = parse_body(req);
  const auto image = require_image(image_id);

  const auto msg = body.find("message");
  if (msg == body.end() || !msg->is_string() || trim(msg->get<std::string>()).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "message must be a non-empty string");
  }
  const auto message = msg->get<std::string>();

  std::string session_id;
  if (const auto sid = body.find("session_id"); sid != body.end() && !sid->is_null()) {
    if (!sid->is_string()) throw Error(ErrorCode::kInvalidArgument, "session_id must be a string");
    session_id = sid->get<std::string>();
  } else {
    const auto control = body.find("control");
    if (control == body.end() || control->is_null()) {
      throw Error(ErrorCode::kInvalidArgument, "the first chat call must carry a control");
    }
    CaptionRequest seed;
    seed.image_id = image_id;
    seed.control = control_from_wire(*control);
    seed.controls = controls_field(body);
    seed.use_cot = true;
    seed.refine = false;
    const auto result = pipeline_.caption_object(*image, seed);
    masks_.put(image_id, result.mask);
    const auto session = chat_.start_session(image_id, result.mask, result.raw_caption);
    sessions_.create(session);
    session_id = session.id;
  }

  auto session = sessions_.acquire(session_id, image_id);
  const auto before = session.messages.size();
  ChatTurnResult turn;
  try {
    turn = chat_.chat_turn(session, message);
  } catch (...) {
    sessions_.release(session_id);
    throw;
  }
  sessions_.commit(session, before);

  ojson out;
  out["session_id"] = session_id;
  out["reply"] = turn.reply;
  out["tool_calls"] = ojson::array();
  for (const auto& call : turn.tool_calls) out["tool_calls"].push_back(to_wire(call));
  send_json(res, 200, out);
}

void Service::handle_paragraph(const Req& req, Res& res) {
  const auto image_id = req.matches[1].str();
  const auto body = parse_body(req);
  const auto image = require_image(image_id);

  ParagraphOptions defaults;
  defaults.max_regions = config_.max_regions;
  const auto options = paragraph_options_from_wire(body, defaults);
  const auto controls = controls_field(body);

  const auto masks = cached_segments(image_id, *image);
  auto result = paragraph_.caption_everything(*image, controls, options, masks.get());
  for (auto& region : result.dense) region.mask_id = masks_.put(image_id, region.mask);
  send_json(res, 200, to_wire(result));
}

void Service::handle_mask(const Req& req, Res& res) {
  const auto image_id = req.matches[1].str();
  const auto mask_id = req.matches[2].str();
  require_image(image_id);
  const auto mask = masks_.get(image_id, mask_id);
  if (!mask) throw Error(ErrorCode::kUnknownMask, "unknown mask " + mask_id);
  res.status = 200;
  res.set_content(rle_to_text(*mask), kJson);
}

void Service::handle_transcript(const Req& req, Res& res) {
  const auto image_id = req.matches[1].str();
  const auto session_id = req.matches[2].str();
  const auto session = sessions_.get(session_id);
  if (!session || session->image_id != image_id) {
    throw Error(ErrorCode::kUnknownSession, "unknown session " + session_id);
  }
  ojson out;
  out["session_id"] = session->id;
  out["image_id"] = session->image_id;
  out["seed_caption"] = session->seed_caption;
  out["messages"] = ojson::array();
  for (const auto& m : session->messages) out["messages"].push_back(to_wire(m));
  send_json(res, 200, out);
}

void Service::handle_healthz(const Req&, Res& res) {
  std::vector<std::pair<BackendKind, std::future<bool>>> probes;
  for (const auto kind : kAllBackendKinds) {
    Backend* backend = backends_.get(kind);
    probes.emplace_back(kind, std::async(std::launch::async, [backend] {
                          try {
                            return backend != nullptr && backend->probe(kProbeTimeout);
                          } catch (...) {
                            return false;
                          }
                        }));
  }
  bool all_ok = true;
  ojson per_kind;
  for (auto& [kind, probe] : probes) {
    const bool ok = probe.get();
    all_ok = all_ok && ok;
    per_kind[std::string(to_string(kind))] = ok ? "ok" : "unreachable";
  }
  ojson out;
  out["status"] = all_ok ? "ok" : "degraded";
  out["backends"] = per_kind;
  send_json(res, 200, out);
}

void Service::handle_metrics(const Req&, Res& res) {
  const auto m = metrics();
  ojson out;
  out["requests"] = m.requests;
  ojson cache;
  cache["hits"] = m.cache_hits;
  cache["misses"] = m.cache_misses;
  cache["entries"] = m.cache_entries;
  cache["capacity"] = config_.cache_size;
  out["segment_cache"] = cache;
  send_json(res, 200, out);
}

}  // namespace capengine

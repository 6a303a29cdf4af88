// SPDX-License-Identifier: Apache-2.0
#include "capengine/backends.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include "capengine/error.hpp"
#include "capengine/image_codec.hpp"
#include "capengine/text.hpp"

namespace capengine {

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::kSegmenter: return "segmenter";
    case BackendKind::kCaptioner: return "captioner";
    case BackendKind::kRefiner: return "refiner";
    case BackendKind::kVqa: return "vqa";
    case BackendKind::kOcr: return "ocr";
  }
  return "unknown";
}

std::optional<BackendKind> parse_backend_kind(std::string_view text) {
  for (const auto kind : kAllBackendKinds) {
    if (to_string(kind) == text) return kind;
  }
  return std::nullopt;
}

void validate(const BackendConfig& config) {
  const auto name = std::string(to_string(config.kind));
  if (config.max_attempts < 1) throw Error(ErrorCode::kConfig, name + ": max_attempts must be >= 1");
  if (config.timeout.count() <= 0) throw Error(ErrorCode::kConfig, name + ": timeout must be positive");
  if (config.mode == BackendMode::kRemote && config.endpoint.empty()) {
    throw Error(ErrorCode::kConfig, name + ": remote mode requires an endpoint");
  }
  if (config.mode == BackendMode::kMock && !config.endpoint.empty()) {
    throw Error(ErrorCode::kConfig, name + ": endpoint given but mode is mock");
  }
}

Backend* BackendSet::get(BackendKind kind) const {
  switch (kind) {
    case BackendKind::kSegmenter: return segmenter.get();
    case BackendKind::kCaptioner: return captioner.get();
    case BackendKind::kRefiner: return refiner.get();
    case BackendKind::kVqa: return vqa.get();
    case BackendKind::kOcr: return ocr.get();
  }
  return nullptr;
}

bool is_refusal(std::string_view text, const std::vector<std::string>& markers) {
  const auto body = trim(text);
  return std::any_of(markers.begin(), markers.end(),
                     [&](const std::string& m) { return !m.empty() && starts_with_ci(body, m); });
}

// ---------------------------------------------------------------------------

RetryResult call_with_retry(const BackendConfig& config, Transport& transport,
                            const std::string& path, const std::string& body,
                            const RetryHooks& hooks) {
  const auto sleep = hooks.sleep ? hooks.sleep : [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
  const auto uniform01 = hooks.uniform01 ? hooks.uniform01 : [] {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  };

  const auto kind = std::string(to_string(config.kind));
  std::string last_failure = "no attempt made";
  for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
    if (attempt > 1) {
      const double cap = std::ldexp(static_cast<double>(kBackoffBase.count()), std::min(attempt - 2, 20));
      sleep(std::chrono::milliseconds(static_cast<long long>(uniform01() * cap)));
    }
    try {
      auto response = transport.post(path, body, config.timeout);
      if (response.status >= 200 && response.status < 300) {
        return RetryResult{std::move(response), attempt};
      }
      last_failure = "HTTP " + std::to_string(response.status) + ": " + response.body;
      if (response.status < 500) {
        throw Error(ErrorCode::kBackendUnavailable,
                    kind + " " + path + " rejected request (" + last_failure + ")");
      }
    } catch (const TransportError& e) {
      last_failure = e.what();
    }
  }
  throw Error(ErrorCode::kBackendUnavailable, kind + " " + path + " failed after " +
                                                  std::to_string(config.max_attempts) +
                                                  " attempt(s): " + last_failure);
}

// ---------------------------------------------------------------------------
// Mocks

std::vector<SegmentationCandidate> MockSegmenter::segment(const RgbImage& image,
                                                          const SegPrompt& prompt) {
  const auto& dims = image.dims();
  if (prompt.box) {
    return {{rle_encode(BitMask::from_box(dims, *prompt.box)), 0.95}};
  }
  const auto first = std::find_if(prompt.points.begin(), prompt.points.end(),
                                  [](const auto& p) { return p.label == PointLabel::kPositive; });
  if (first == prompt.points.end()) throw Error(ErrorCode::kNoMask, "no positive point or box");

  const int side = std::max(1, std::min(dims.width, dims.height) / 4);
  const int x0 = first->x - side / 2;
  const int y0 = first->y - side / 2;
  return {{rle_encode(BitMask::from_box(dims, {x0, y0, x0 + side - 1, y0 + side - 1})), 0.9}};
}

std::vector<BitMask> MockSegmenter::segment_everything(const RgbImage& image) {
  const auto& d = image.dims();
  const int mx = d.width / 2;
  const int my = d.height / 2;
  const BoxRegion quadrants[] = {
      {0, 0, mx - 1, my - 1}, {mx, 0, d.width - 1, my - 1},
      {0, my, mx - 1, d.height - 1}, {mx, my, d.width - 1, d.height - 1}};
  std::vector<BitMask> masks;
  for (const auto& q : quadrants) {
    if (q.x1 < q.x0 || q.y1 < q.y0) continue;
    masks.push_back(BitMask::from_box(d, q));
  }
  return masks;
}

std::string MockCaptioner::caption(const RgbImage& region, std::string_view prefix) {
  return "mock-caption(h=" + raster_digest(region).substr(0, 8) + "|p=" + std::string(prefix) + ")";
}

std::string MockRefiner::refine(const PromptText& prompt) {
  const auto lines = split_lines(prompt.text);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    constexpr std::string_view kMarker = "Caption: ";
    if (std::string_view(*it).substr(0, kMarker.size()) == kMarker) {
      return it->substr(kMarker.size()) + " [refined]";
    }
  }
  return "mock-refined(" + sha256_hex(prompt.text).substr(0, 8) + ")";
}

ScriptedRefiner::ScriptedRefiner(std::vector<std::string> responses,
                                 std::vector<std::string> refusal_markers)
    : responses_(std::move(responses)), refusal_markers_(std::move(refusal_markers)) {}

std::vector<std::string> ScriptedRefiner::load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open refiner script " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string decoded;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '\\' && i + 1 < line.size()) {
        const char next = line[i + 1];
        if (next == 'n') { decoded += '\n'; ++i; continue; }
        if (next == '\\') { decoded += '\\'; ++i; continue; }
      }
      decoded += line[i];
    }
    out.push_back(std::move(decoded));
  }
  return out;
}

std::string ScriptedRefiner::refine(const PromptText& prompt) {
  std::string response;
  {
    std::lock_guard lock(mutex_);
    prompts_.push_back(prompt.text);
    if (cursor_ >= responses_.size()) {
      throw Error(ErrorCode::kBackendUnavailable, "refiner script exhausted");
    }
    response = responses_[cursor_++];
  }
  if (is_refusal(response, refusal_markers_)) throw Error(ErrorCode::kRefusal, response);
  if (trim(response).empty()) throw Error(ErrorCode::kMalformedResponse, "empty refiner response");
  return response;
}

std::size_t ScriptedRefiner::consumed() const {
  std::lock_guard lock(mutex_);
  return cursor_;
}

std::string MockVqa::answer(const RgbImage&, std::string_view question) {
  if (trim(question).empty()) throw Error(ErrorCode::kInvalidArgument, "empty VQA question");
  return "mock-vqa(" + std::string(question) + ")";
}

std::vector<OcrLine> MockOcr::load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open OCR fixture " + path.string());
  std::vector<OcrLine> lines;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto bad = [&] {
      return Error(ErrorCode::kConfig, path.string() + ":" + std::to_string(lineno) +
                                           ": expected text<TAB>x0,y0,x1,y1<TAB>conf");
    };
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw bad();
    OcrLine rec;
    rec.text = line.substr(0, t1);
    const auto coords = line.substr(t1 + 1, t2 - t1 - 1);
    if (std::sscanf(coords.c_str(), "%d,%d,%d,%d", &rec.box.x0, &rec.box.y0, &rec.box.x1,
                    &rec.box.y1) != 4) {
      throw bad();
    }
    try {
      rec.confidence = std::stod(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw bad();
    }
    if (rec.text.empty() || rec.confidence < 0.0 || rec.confidence > 1.0) throw bad();
    lines.push_back(std::move(rec));
  }
  return lines;
}

std::vector<OcrLine> MockOcr::read(const RgbImage&) { return lines_; }

BackendSet make_mock_backends() {
  return BackendSet{std::make_shared<MockSegmenter>(), std::make_shared<MockCaptioner>(),
                    std::make_shared<MockRefiner>(), std::make_shared<MockVqa>(),
                    std::make_shared<MockOcr>()};
}

BackendSet make_backends(const std::map<BackendKind, BackendConfig>& configs) {
  BackendSet set = make_mock_backends();
  for (const auto& [kind, config] : configs) {
    validate(config);
    if (config.mode == BackendMode::kMock) {
      if (kind == BackendKind::kRefiner && config.fixture) {
        set.refiner = std::make_shared<ScriptedRefiner>(ScriptedRefiner::load_script(*config.fixture),
                                                        config.refusal_markers);
      } else if (kind == BackendKind::kOcr && config.fixture) {
        set.ocr = std::make_shared<MockOcr>(MockOcr::load_fixture(*config.fixture));
      }
      continue;
    }
    auto transport = std::make_shared<HttpTransport>(config.endpoint, config.bearer_token);
    switch (kind) {
      case BackendKind::kSegmenter: set.segmenter = std::make_shared<RemoteSegmenter>(config, transport); break;
      case BackendKind::kCaptioner: set.captioner = std::make_shared<RemoteCaptioner>(config, transport); break;
      case BackendKind::kRefiner: set.refiner = std::make_shared<RemoteRefiner>(config, transport); break;
      case BackendKind::kVqa: set.vqa = std::make_shared<RemoteVqa>(config, transport); break;
      case BackendKind::kOcr: set.ocr = std::make_shared<RemoteOcr>(config, transport); break;
    }
  }
  return set;
}

}  // namespace capengine

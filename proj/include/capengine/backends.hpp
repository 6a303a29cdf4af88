// SPDX-License-Identifier: Apache-2.0
//
// The five model capabilities the engine drives (segment, caption, refine,
// VQA, OCR). Each capability has a remote HTTP client speaking the JSON wire
// protocol documented in README.md and a deterministic in-process mock.
#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "capengine/geometry.hpp"
#include "capengine/prompts.hpp"
#include "capengine/records.hpp"

namespace capengine {

enum class BackendKind { kSegmenter, kCaptioner, kRefiner, kVqa, kOcr };
enum class BackendMode { kRemote, kMock };

inline constexpr BackendKind kAllBackendKinds[] = {BackendKind::kSegmenter, BackendKind::kCaptioner,
                                                   BackendKind::kRefiner, BackendKind::kVqa,
                                                   BackendKind::kOcr};

std::string_view to_string(BackendKind kind);
std::optional<BackendKind> parse_backend_kind(std::string_view text);

struct BackendConfig {
  BackendKind kind = BackendKind::kSegmenter;
  BackendMode mode = BackendMode::kMock;
  std::string endpoint;  // e.g. http://127.0.0.1:9000 or http://host/prefix
  std::chrono::milliseconds timeout{30000};
  int max_attempts = 3;
  std::string bearer_token;
  // Mock-only: scripted refiner transcript or OCR fixture file.
  std::optional<std::filesystem::path> fixture;
  // Refiner only.
  std::vector<std::string> refusal_markers{"I cannot", "I'm sorry"};
};

/// Throws Config if max_attempts < 1 or endpoint presence does not match mode.
void validate(const BackendConfig& config);

struct SegmentationCandidate {
  RleMask mask;
  double score = 0.0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Cheap reachability probe used by health checks.
  virtual bool probe(std::chrono::milliseconds timeout) { return (void)timeout, true; }
};

class Segmenter : public Backend {
 public:
  virtual std::vector<SegmentationCandidate> segment(const RgbImage& image, const SegPrompt& prompt) = 0;
  virtual std::vector<BitMask> segment_everything(const RgbImage& image) = 0;
};

class Captioner : public Backend {
 public:
  virtual std::string caption(const RgbImage& region, std::string_view prefix) = 0;
};

class Refiner : public Backend {
 public:
  virtual std::string refine(const PromptText& prompt) = 0;
};

class VqaModel : public Backend {
 public:
  virtual std::string answer(const RgbImage& region, std::string_view question) = 0;
};

class OcrReader : public Backend {
 public:
  virtual std::vector<OcrLine> read(const RgbImage& image) = 0;
};

struct BackendSet {
  std::shared_ptr<Segmenter> segmenter;
  std::shared_ptr<Captioner> captioner;
  std::shared_ptr<Refiner> refiner;
  std::shared_ptr<VqaModel> vqa;
  std::shared_ptr<OcrReader> ocr;

  Backend* get(BackendKind kind) const;
};

/// True when the text, after leading whitespace, starts with any marker
/// (ASCII case-insensitive).
bool is_refusal(std::string_view text, const std::vector<std::string>& markers);

// ---------------------------------------------------------------------------
// Transport and retry policy

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Connection-level failure (refused, reset, timed out).
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// POST a JSON body. Throws TransportError when no HTTP response arrives.
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            std::chrono::milliseconds timeout) = 0;
  virtual bool probe(std::chrono::milliseconds timeout) = 0;
};

class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string endpoint, std::string bearer_token);

  HttpResponse post(const std::string& path, const std::string& body,
                    std::chrono::milliseconds timeout) override;
  bool probe(std::chrono::milliseconds timeout) override;

 private:
  std::string origin_;     // scheme://host:port
  std::string base_path_;  // optional prefix, no trailing slash
  std::string bearer_token_;
};

struct RetryHooks {
  std::function<void(std::chrono::milliseconds)> sleep;
  std::function<double()> uniform01;
};

inline constexpr std::chrono::milliseconds kBackoffBase{200};

struct RetryResult {
  HttpResponse response;
  int attempts = 0;
};

/// Retries transport errors and 5xx with full-jitter exponential backoff
/// (base 200 ms, factor 2), at most config.max_attempts attempts. 4xx fails
/// immediately. Throws BackendUnavailable when no 2xx response is obtained.
RetryResult call_with_retry(const BackendConfig& config, Transport& transport,
                            const std::string& path, const std::string& body,
                            const RetryHooks& hooks = {});

// ---------------------------------------------------------------------------
// Remote clients

class RemoteClient {
 protected:
  RemoteClient(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks);
  /// Sends the request and parses the 2xx JSON body; MalformedResponse on bad JSON.
  std::string call(const std::string& path, const std::string& body);
  bool probe_transport(std::chrono::milliseconds timeout) { return transport_->probe(timeout); }

  BackendConfig config_;

 private:
  std::shared_ptr<Transport> transport_;
  RetryHooks hooks_;
};

class RemoteSegmenter final : public Segmenter, RemoteClient {
 public:
  RemoteSegmenter(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks = {});
  std::vector<SegmentationCandidate> segment(const RgbImage& image, const SegPrompt& prompt) override;
  std::vector<BitMask> segment_everything(const RgbImage& image) override;
  bool probe(std::chrono::milliseconds t) override { return probe_transport(t); }
};

class RemoteCaptioner final : public Captioner, RemoteClient {
 public:
  RemoteCaptioner(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks = {});
  std::string caption(const RgbImage& region, std::string_view prefix) override;
  bool probe(std::chrono::milliseconds t) override { return probe_transport(t); }
};

class RemoteRefiner final : public Refiner, RemoteClient {
 public:
  RemoteRefiner(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks = {});
  std::string refine(const PromptText& prompt) override;
  bool probe(std::chrono::milliseconds t) override { return probe_transport(t); }
};

class RemoteVqa final : public VqaModel, RemoteClient {
 public:
  RemoteVqa(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks = {});
  std::string answer(const RgbImage& region, std::string_view question) override;
  bool probe(std::chrono::milliseconds t) override { return probe_transport(t); }
};

class RemoteOcr final : public OcrReader, RemoteClient {
 public:
  RemoteOcr(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks = {});
  std::vector<OcrLine> read(const RgbImage& image) override;
  bool probe(std::chrono::milliseconds t) override { return probe_transport(t); }
};

// ---------------------------------------------------------------------------
// Mocks

/// Point prompt: filled square of side floor(min(w,h)/4) centred on the first
/// positive point (score 0.9). Box prompt: the box filled (score 0.95); the
/// box wins when both are present. segment_everything: the 2x2 quadrants.
class MockSegmenter final : public Segmenter {
 public:
  std::vector<SegmentationCandidate> segment(const RgbImage& image, const SegPrompt& prompt) override;
  std::vector<BitMask> segment_everything(const RgbImage& image) override;
};

/// `mock-caption(h=<first 8 hex of raster_digest>|p=<prefix>)`
class MockCaptioner final : public Captioner {
 public:
  std::string caption(const RgbImage& region, std::string_view prefix) override;
};

/// Echoes the last `Caption: ` line with ` [refined]` appended; prompts
/// without one yield `mock-refined(<first 8 hex of sha256(prompt)>)`.
class MockRefiner final : public Refiner {
 public:
  std::string refine(const PromptText& prompt) override;
};

/// Replays a fixed list of responses in order, one per call. Responses that
/// start with a refusal marker raise Refusal; an exhausted script raises
/// BackendUnavailable.
class ScriptedRefiner final : public Refiner {
 public:
  explicit ScriptedRefiner(std::vector<std::string> responses,
                           std::vector<std::string> refusal_markers = BackendConfig{}.refusal_markers);

  /// One response per line; `\n` and `\\` escapes decode to newline and backslash.
  static std::vector<std::string> load_script(const std::filesystem::path& path);

  std::string refine(const PromptText& prompt) override;
  std::size_t consumed() const;
  const std::vector<std::string>& prompts_seen() const { return prompts_; }

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> responses_;
  std::vector<std::string> refusal_markers_;
  std::vector<std::string> prompts_;
  std::size_t cursor_ = 0;
};

/// `mock-vqa(<question>)`
class MockVqa final : public VqaModel {
 public:
  std::string answer(const RgbImage& region, std::string_view question) override;
};

/// Returns its configured lines verbatim (empty by default).
class MockOcr final : public OcrReader {
 public:
  MockOcr() = default;
  explicit MockOcr(std::vector<OcrLine> lines) : lines_(std::move(lines)) {}

  /// `text<TAB>x0,y0,x1,y1<TAB>conf` per line.
  static std::vector<OcrLine> load_fixture(const std::filesystem::path& path);

  std::vector<OcrLine> read(const RgbImage& image) override;

 private:
  std::vector<OcrLine> lines_;
};

BackendSet make_mock_backends();

/// One config per kind; kinds without a config default to mock.
BackendSet make_backends(const std::map<BackendKind, BackendConfig>& configs);

}  // namespace capengine

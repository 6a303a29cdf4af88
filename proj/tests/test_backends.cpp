// SPDX-License-Identifier: Apache-2.0
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "capengine/backends.hpp"
#include "capengine/error.hpp"
#include "capengine/image_codec.hpp"
#include "capengine/text.hpp"
#include "fake_transport.hpp"
#include "test_support.hpp"

namespace capengine {
namespace {

using nlohmann::json;
using testing::FakeTransport;
using testing::RecordingHooks;
using testing::status;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kConfig;
}

BackendConfig remote_config(BackendKind kind, std::string endpoint = "http://127.0.0.1:9") {
  BackendConfig c;
  c.kind = kind;
  c.mode = BackendMode::kRemote;
  c.endpoint = std::move(endpoint);
  c.timeout = std::chrono::milliseconds(2000);
  return c;
}

SegPrompt click(int x, int y) { return {{{x, y, PointLabel::kPositive}}, std::nullopt}; }

// --- config -----------------------------------------------------------------

TEST(BackendConfig, Validation) {
  BackendConfig mock;
  EXPECT_NO_THROW(validate(mock));
  mock.endpoint = "http://x";
  EXPECT_EQ(code_of([&] { validate(mock); }), ErrorCode::kConfig);

  auto remote = remote_config(BackendKind::kRefiner);
  EXPECT_NO_THROW(validate(remote));
  remote.endpoint.clear();
  EXPECT_EQ(code_of([&] { validate(remote); }), ErrorCode::kConfig);

  auto zero = remote_config(BackendKind::kRefiner);
  zero.max_attempts = 0;
  EXPECT_EQ(code_of([&] { validate(zero); }), ErrorCode::kConfig);
}

TEST(BackendKind, NamesRoundTrip) {
  for (const auto kind : kAllBackendKinds) EXPECT_EQ(parse_backend_kind(to_string(kind)), kind);
  EXPECT_FALSE(parse_backend_kind("painter").has_value());
}

// --- mocks ------------------------------------------------------------------

TEST(MockSegmenter, PointRule) {
  MockSegmenter seg;
  const RgbImage image({100, 100});
  const auto out = seg.segment(image, click(50, 50));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].score, 0.9);
  const auto mask = rle_decode(out[0].mask);
  EXPECT_EQ(mask_bbox(mask), (BoxRegion{38, 38, 62, 62}));
  EXPECT_EQ(mask_area(mask), 625u);

  // Near the corner the square is clipped to the image.
  const auto corner = rle_decode(seg.segment(image, click(2, 98))[0].mask);
  EXPECT_EQ(mask_bbox(corner), (BoxRegion{0, 86, 14, 99}));

  // Side follows the shorter image edge.
  const auto tall = rle_decode(seg.segment(RgbImage({40, 100}), click(20, 50))[0].mask);
  EXPECT_EQ(mask_bbox(tall), (BoxRegion{15, 45, 24, 54}));
}

TEST(MockSegmenter, BoxRuleWins) {
  MockSegmenter seg;
  const RgbImage image({30, 20});
  SegPrompt prompt = click(1, 1);
  prompt.box = BoxRegion{5, 6, 10, 8};
  const auto out = seg.segment(image, prompt);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].score, 0.95);
  EXPECT_EQ(rle_decode(out[0].mask), BitMask::from_box({30, 20}, {5, 6, 10, 8}));
}

TEST(MockSegmenter, FirstPositivePointIsTheCentre) {
  MockSegmenter seg;
  SegPrompt prompt{{{90, 90, PointLabel::kNegative}, {10, 10, PointLabel::kPositive}}, std::nullopt};
  const auto mask = rle_decode(seg.segment(RgbImage({100, 100}), prompt)[0].mask);
  EXPECT_EQ(mask_bbox(mask), (BoxRegion{0, 0, 22, 22}));
}

TEST(MockSegmenter, Quadrants) {
  MockSegmenter seg;
  const auto masks = seg.segment_everything(RgbImage({100, 100}));
  ASSERT_EQ(masks.size(), 4u);
  const std::vector<BoxRegion> expected{{0, 0, 49, 49}, {50, 0, 99, 49}, {0, 50, 49, 99}, {50, 50, 99, 99}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(mask_bbox(masks[i]), expected[i]);
    EXPECT_EQ(mask_area(masks[i]), 2500u);
  }
  // Quadrants partition the image.
  BitMask uni({100, 100});
  for (const auto& m : masks) {
    for (int y = 0; y < 100; ++y) {
      for (int x = 0; x < 100; ++x) {
        if (m.get(x, y)) {
          EXPECT_FALSE(uni.get(x, y));
          uni.set(x, y);
        }
      }
    }
  }
  EXPECT_EQ(mask_area(uni), 10000u);
  // A single-pixel image has only one non-empty quadrant.
  EXPECT_EQ(seg.segment_everything(RgbImage({1, 1})).size(), 1u);
}

TEST(MockCaptioner, HashesTheRaster) {
  MockCaptioner cap;
  const auto image = testing::solid_fixture();
  // SHA-256 over u32le width, u32le height and the RGB bytes, computed
  // independently and frozen here.
  EXPECT_EQ(raster_digest(image), "fdf0053ffd32b2753fcacd4e4f3ea5fa643246db2fbb93df585f1f64cf9b020b");
  EXPECT_EQ(cap.caption(image, "Q:"), "mock-caption(h=fdf0053f|p=Q:)");
  EXPECT_EQ(cap.caption(image, "Q:"), cap.caption(image, "Q:"));
  EXPECT_EQ(cap.caption(crop_image(image, {34, 34, 66, 66}), ""), "mock-caption(h=f029bfd9|p=)");
}

TEST(MockRefiner, EchoesLastCaptionLine) {
  MockRefiner r;
  EXPECT_EQ(r.refine({"Revise it.\nCaption: first\nCaption: a dog"}), "a dog [refined]");
  EXPECT_EQ(r.refine({"hello"}), "mock-refined(" + sha256_hex(std::string_view("hello")).substr(0, 8) + ")");
  EXPECT_EQ(r.refine({"hello"}), "mock-refined(2cf24dba)");
}

TEST(ScriptedRefiner, ReplaysInOrderThenRunsDry) {
  ScriptedRefiner r({"one", "two"});
  EXPECT_EQ(r.refine({"a"}), "one");
  EXPECT_EQ(r.refine({"b"}), "two");
  EXPECT_EQ(code_of([&] { r.refine({"c"}); }), ErrorCode::kBackendUnavailable);
  EXPECT_EQ(r.prompts_seen(), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(r.consumed(), 2u);
}

TEST(ScriptedRefiner, RefusalMarkers) {
  ScriptedRefiner r({"  i'm SORRY, no", "I cannot do that", "Sure thing"});
  EXPECT_EQ(code_of([&] { r.refine({"a"}); }), ErrorCode::kRefusal);
  EXPECT_EQ(code_of([&] { r.refine({"a"}); }), ErrorCode::kRefusal);
  EXPECT_EQ(r.refine({"a"}), "Sure thing");
}

TEST(ScriptedRefiner, LoadsEscapes) {
  const auto lines = ScriptedRefiner::load_script(testing::data_path("fixtures/refiner_escapes.script"));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "a \\ backslash\nand a second line");
  EXPECT_EQ(lines[1], "plain");
  EXPECT_EQ(code_of([] { ScriptedRefiner::load_script("/nonexistent/script"); }), ErrorCode::kConfig);
}

TEST(IsRefusal, MatchesPrefixCaseInsensitively) {
  const std::vector<std::string> markers{"I cannot", "I'm sorry"};
  EXPECT_TRUE(is_refusal("I cannot help", markers));
  EXPECT_TRUE(is_refusal("\n  i CANNOT help", markers));
  EXPECT_FALSE(is_refusal("Well, I cannot", markers));
  EXPECT_FALSE(is_refusal("anything", {}));
}

TEST(MockVqa, EchoesQuestion) {
  MockVqa vqa;
  const RgbImage image({2, 2});
  EXPECT_EQ(vqa.answer(image, "what color is it?"), "mock-vqa(what color is it?)");
  EXPECT_EQ(code_of([&] { vqa.answer(image, "  "); }), ErrorCode::kInvalidArgument);
}

TEST(MockOcr, DefaultAndFixture) {
  const RgbImage image({2, 2});
  EXPECT_TRUE(MockOcr().read(image).empty());
  MockOcr ocr(MockOcr::load_fixture(testing::data_path("fixtures/ocr_exit.tsv")));
  const auto lines = ocr.read(image);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], (OcrLine{"EXIT", {10, 10, 40, 20}, 0.9}));
  EXPECT_EQ(lines[1], (OcrLine{"??", {50, 50, 60, 60}, 0.1}));
}

TEST(MakeBackends, FixturesSelectScriptedMocks) {
  std::map<BackendKind, BackendConfig> configs;
  configs[BackendKind::kRefiner].kind = BackendKind::kRefiner;
  configs[BackendKind::kRefiner].fixture = testing::data_path("fixtures/chat_final.script");
  const auto set = make_backends(configs);
  EXPECT_EQ(set.refiner->refine({"x"}), "Final Answer: It is a grey square.");
  EXPECT_TRUE(set.segmenter && set.captioner && set.vqa && set.ocr);
  for (const auto kind : kAllBackendKinds) EXPECT_NE(set.get(kind), nullptr);
}

// --- retry ------------------------------------------------------------------

TEST(Retry, SucceedsFirstTime) {
  FakeTransport t({status(200, "{\"text\":\"ok\"}")});
  RecordingHooks rec;
  const auto r = call_with_retry(remote_config(BackendKind::kRefiner), t, "/refine", "{}", rec.hooks());
  EXPECT_EQ(r.attempts, 1);
  EXPECT_TRUE(rec.delays.empty());
}

TEST(Retry, TwoServerErrorsThenSuccess) {
  FakeTransport t({status(503), status(500), status(200, "{\"text\":\"ok\"}")});
  RecordingHooks rec;
  const auto r = call_with_retry(remote_config(BackendKind::kRefiner), t, "/refine", "{\"prompt\":\"p\"}",
                                 rec.hooks());
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(r.response.body, "{\"text\":\"ok\"}");
  EXPECT_EQ(rec.delays, (std::vector<long long>{200, 400}));
  // Payload is identical on every attempt.
  ASSERT_EQ(t.bodies.size(), 3u);
  EXPECT_EQ(t.bodies[0], t.bodies[2]);
}

TEST(Retry, ClientErrorIsNotRetried) {
  FakeTransport t({status(404, "{\"error\":\"nope\"}"), status(200)});
  RecordingHooks rec;
  EXPECT_EQ(code_of([&] { call_with_retry(remote_config(BackendKind::kRefiner), t, "/refine", "{}", rec.hooks()); }),
            ErrorCode::kBackendUnavailable);
  EXPECT_EQ(t.paths.size(), 1u);
}

TEST(Retry, TransportErrorsAreRetriedAndBounded) {
  for (int max_attempts = 1; max_attempts <= 6; ++max_attempts) {
    FakeTransport t({std::nullopt, std::nullopt, std::nullopt, std::nullopt, std::nullopt, std::nullopt,
                     std::nullopt});
    auto cfg = remote_config(BackendKind::kCaptioner);
    cfg.max_attempts = max_attempts;
    RecordingHooks rec;
    rec.jitter = 0.5;
    EXPECT_EQ(code_of([&] { call_with_retry(cfg, t, "/caption", "{}", rec.hooks()); }),
              ErrorCode::kBackendUnavailable);
    EXPECT_EQ(static_cast<int>(t.paths.size()), max_attempts);
    ASSERT_EQ(static_cast<int>(rec.delays.size()), max_attempts - 1);
    for (int k = 0; k + 1 < max_attempts; ++k) EXPECT_EQ(rec.delays[k], 100LL << k);
  }
}

// --- remote protocol against an in-process fake model server ----------------

class FakeModelServer {
 public:
  FakeModelServer() {
    server_.Post("/api/segment", [this](const httplib::Request& req, httplib::Response& res) {
      last_segment = json::parse(req.body);
      last_auth = req.get_header_value("Authorization");
      const json rle = json::parse(rle_to_text(rle_encode(BitMask::from_box({4, 3}, {1, 1, 2, 2}))));
      res.set_content(json{{"candidates", {{{"rle", rle}, {"score", 0.7}}}}}.dump(), "application/json");
    });
    server_.Post("/api/segment_all", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"masks":[{"rle":{"w":5,"h":5,"counts":[25]}}]})", "application/json");
    });
    server_.Post("/api/caption", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      const auto text = body["prefix"] == "empty" ? std::string("  ") : "  a cat  ";
      res.set_content(json{{"text", text}}.dump(), "application/json");
    });
    server_.Post("/api/refine", [](const httplib::Request& req, httplib::Response& res) {
      const auto prompt = json::parse(req.body)["prompt"].get<std::string>();
      res.set_content(json{{"text", prompt == "refuse" ? "I'm sorry, no." : "refined: " + prompt}}.dump(),
                      "application/json");
    });
    server_.Post("/api/vqa", [](const httplib::Request& req, httplib::Response& res) {
      res.set_content(json{{"answer", "yes to " + json::parse(req.body)["question"].get<std::string>()}}.dump(),
                      "application/json");
    });
    server_.Post("/api/ocr", [this](const httplib::Request&, httplib::Response& res) {
      const double conf = bad_ocr ? 1.5 : 0.75;
      res.set_content(json{{"lines", {{{"text", "STOP"}, {"box", {0, 0, 1, 1}}, {"conf", conf}}}}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeModelServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/api"; }

  json last_segment;
  std::string last_auth;
  bool bad_ocr = false;

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TEST(RemoteProtocol, RoundTripsEveryEndpoint) {
  FakeModelServer server;
  std::mt19937 rng(1);
  const auto image = testing::random_image(rng, {4, 3});

  auto seg_cfg = remote_config(BackendKind::kSegmenter, server.endpoint());
  seg_cfg.bearer_token = "secret";
  RemoteSegmenter seg(seg_cfg, std::make_shared<HttpTransport>(seg_cfg.endpoint, seg_cfg.bearer_token));
  SegPrompt prompt{{{1, 2, PointLabel::kPositive}, {3, 0, PointLabel::kNegative}}, BoxRegion{0, 0, 3, 2}};
  const auto candidates = seg.segment(image, prompt);
  ASSERT_EQ(candidates.size(), 1u);
  EXPECT_DOUBLE_EQ(candidates[0].score, 0.7);
  EXPECT_EQ(mask_area(rle_decode(candidates[0].mask)), 4u);
  EXPECT_EQ(server.last_auth, "Bearer secret");
  EXPECT_EQ(server.last_segment["points"], json::parse("[[1,2,1],[3,0,0]]"));
  EXPECT_EQ(server.last_segment["box"], json::parse("[0,0,3,2]"));
  EXPECT_EQ(server.last_segment["multimask"], true);
  const auto png = base64_decode(server.last_segment["image_b64"].get<std::string>());
  EXPECT_EQ(decode_image(png).image, image);
  EXPECT_TRUE(seg.probe(std::chrono::milliseconds(500)));

  // segment_all reports a 5x5 mask for a 4x3 image.
  EXPECT_EQ(code_of([&] { seg.segment_everything(image); }), ErrorCode::kMalformedResponse);

  const auto cap_cfg = remote_config(BackendKind::kCaptioner, server.endpoint());
  RemoteCaptioner cap(cap_cfg, std::make_shared<HttpTransport>(cap_cfg.endpoint, ""));
  EXPECT_EQ(cap.caption(image, "Q"), "a cat");
  EXPECT_EQ(code_of([&] { cap.caption(image, "empty"); }), ErrorCode::kEmptyCaption);

  const auto ref_cfg = remote_config(BackendKind::kRefiner, server.endpoint());
  RemoteRefiner ref(ref_cfg, std::make_shared<HttpTransport>(ref_cfg.endpoint, ""));
  EXPECT_EQ(ref.refine({"hello"}), "refined: hello");
  EXPECT_EQ(code_of([&] { ref.refine({"refuse"}); }), ErrorCode::kRefusal);

  const auto vqa_cfg = remote_config(BackendKind::kVqa, server.endpoint());
  RemoteVqa vqa(vqa_cfg, std::make_shared<HttpTransport>(vqa_cfg.endpoint, ""));
  EXPECT_EQ(vqa.answer(image, "red?"), "yes to red?");

  const auto ocr_cfg = remote_config(BackendKind::kOcr, server.endpoint());
  RemoteOcr ocr(ocr_cfg, std::make_shared<HttpTransport>(ocr_cfg.endpoint, ""));
  EXPECT_EQ(ocr.read(image), (std::vector<OcrLine>{{"STOP", {0, 0, 1, 1}, 0.75}}));
  server.bad_ocr = true;
  EXPECT_EQ(code_of([&] { ocr.read(image); }), ErrorCode::kMalformedResponse);
}

TEST(RemoteProtocol, MalformedPayloads) {
  const std::vector<std::string> bad_segment{
      "not json",
      "[]",
      R"({"candidates":"x"})",
      R"({"candidates":[{"score":0.5}]})",
      R"({"candidates":[{"rle":{"w":4,"h":3,"counts":[12]},"score":1.5}]})",
      R"({"candidates":[{"rle":{"w":4,"h":3,"counts":[11]},"score":0.5}]})",
      R"({"candidates":[{"rle":{"w":3,"h":4,"counts":[12]},"score":0.5}]})",
  };
  const RgbImage image({4, 3});
  for (const auto& body : bad_segment) {
    auto t = std::make_shared<FakeTransport>(std::vector<std::optional<HttpResponse>>{status(200, body)});
    RemoteSegmenter seg(remote_config(BackendKind::kSegmenter), t);
    EXPECT_EQ(code_of([&] { seg.segment(image, click(0, 0)); }), ErrorCode::kMalformedResponse) << body;
  }
  auto empty = std::make_shared<FakeTransport>(
      std::vector<std::optional<HttpResponse>>{status(200, R"({"candidates":[]})")});
  RemoteSegmenter seg(remote_config(BackendKind::kSegmenter), empty);
  EXPECT_EQ(code_of([&] { seg.segment(image, click(0, 0)); }), ErrorCode::kNoMask);

  auto no_masks = std::make_shared<FakeTransport>(
      std::vector<std::optional<HttpResponse>>{status(200, R"({"masks":[]})")});
  RemoteSegmenter seg_all(remote_config(BackendKind::kSegmenter), no_masks);
  EXPECT_TRUE(seg_all.segment_everything(image).empty());
}

TEST(RemoteProtocol, UnreachableEndpoint) {
  // Grab a free port and close it again so nothing is listening there.
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  auto cfg = remote_config(BackendKind::kCaptioner, "http://127.0.0.1:" + std::to_string(port));
  cfg.max_attempts = 2;
  RecordingHooks rec;
  RemoteCaptioner cap(cfg, std::make_shared<HttpTransport>(cfg.endpoint, ""), rec.hooks());
  EXPECT_EQ(code_of([&] { cap.caption(RgbImage({1, 1}), ""); }), ErrorCode::kBackendUnavailable);
  EXPECT_EQ(rec.delays.size(), 1u);
  EXPECT_FALSE(cap.probe(std::chrono::milliseconds(200)));
}

}  // namespace
}  // namespace capengine

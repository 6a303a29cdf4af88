// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "capengine/backends.hpp"
#include "capengine/error.hpp"
#include "capengine/pipeline.hpp"
#include "capengine/wire.hpp"
#include "test_support.hpp"

namespace capengine {
namespace {

// Frozen from an independent SHA-256 over (u32le w, u32le h, RGB bytes) of
// the 100x100 fixture and its derived rasters.
constexpr const char* kCropHash = "f029bfd9";       // 33x33 crop at (34,34)
constexpr const char* kWhitenedHash = "4cd2826a";   // full frame, background white
constexpr const char* kFixtureDigest = "fdf0053ffd32b275";

class CountingRefiner final : public Refiner {
 public:
  std::string refine(const PromptText& prompt) override {
    ++calls;
    last_prompt = prompt.text;
    return inner.refine(prompt);
  }
  MockRefiner inner;
  int calls = 0;
  std::string last_prompt;
};

class FailingSegmenter final : public Segmenter {
 public:
  std::vector<SegmentationCandidate> segment(const RgbImage&, const SegPrompt&) override {
    throw Error(ErrorCode::kBackendUnavailable, "segmenter down");
  }
  std::vector<BitMask> segment_everything(const RgbImage&) override {
    throw Error(ErrorCode::kBackendUnavailable, "segmenter down");
  }
};

class FailingCaptioner final : public Captioner {
 public:
  std::string caption(const RgbImage&, std::string_view) override {
    throw Error(ErrorCode::kBackendUnavailable, "captioner down");
  }
};

CaptionRequest point_request(bool use_cot, bool refine) {
  CaptionRequest r;
  r.image_id = "fixture";
  r.control = PointSet{{{50, 50, PointLabel::kPositive}}};
  r.use_cot = use_cot;
  r.refine = refine;
  return r;
}

std::vector<std::string> step_names(const StepTrace& trace) {
  std::vector<std::string> out;
  for (const auto& s : trace) out.emplace_back(to_string(s.name));
  return out;
}

const std::string kCategory = std::string("mock-caption(h=") + kWhitenedHash +
                              "|p=Question: What is the name of the object in this image? Answer:)";
const std::string kCotRaw = std::string("mock-caption(h=") + kCropHash + "|p=Question: Describe the " +
                            "mock-caption(h=" + kWhitenedHash +
                            "|p=question: what is the name of the object in this image? answer:)" +
                            " in this image in one sentence. Answer:)";

TEST(ChooseMask, Rules) {
  const ImageDims d{10, 10};
  const auto small = rle_encode(BitMask::from_box(d, {0, 0, 1, 4}));  // area 10
  const auto large = rle_encode(BitMask::from_box(d, {0, 0, 3, 4}));  // area 20
  EXPECT_EQ(choose_mask({{small, 0.2}, {large, 0.9}}).mask, large);
  EXPECT_EQ(choose_mask({{small, 0.2}}).mask, small);
  EXPECT_EQ(choose_mask({{small, 0.5}, {large, 0.5}}).mask, large);
  EXPECT_EQ(choose_mask({{large, 0.5}, {large, 0.5}, {small, 0.5}}).mask, large);
  try {
    choose_mask({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoCandidates);
  }
  try {
    choose_mask({{rle_encode(BitMask(d)), 1.0}, {small, 0.1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyMask);
  }
}

TEST(CaptionObject, NoCotMockExample) {
  const CaptionPipeline pipeline(make_mock_backends());
  const auto r = pipeline.caption_object(testing::solid_fixture(), point_request(false, false));
  EXPECT_EQ(r.bbox, (BoxRegion{38, 38, 62, 62}));
  EXPECT_EQ(r.bbox, mask_bbox(rle_decode(r.mask)));
  EXPECT_EQ(r.raw_caption, std::string("mock-caption(h=") + kCropHash + "|p=)");
  EXPECT_FALSE(r.category.has_value());
  EXPECT_FALSE(r.refined_caption.has_value());
  EXPECT_FALSE(r.fallback_used);
  EXPECT_EQ(step_names(r.trace), (std::vector<std::string>{"segment", "crop", "caption"}));
  EXPECT_EQ(r.trace[0].input_digest, kFixtureDigest);
  EXPECT_EQ(r.trace[1].output, "window=[34,34,66,66]");
  EXPECT_EQ(count_backend_calls(r.trace, BackendKind::kCaptioner), 1u);
}

TEST(CaptionObject, CotMockExample) {
  const CaptionPipeline pipeline(make_mock_backends());
  const auto r = pipeline.caption_object(testing::solid_fixture(), point_request(true, true));
  EXPECT_EQ(step_names(r.trace),
            (std::vector<std::string>{"segment", "whiten", "category", "crop", "caption", "refine"}));
  EXPECT_EQ(r.category, kCategory);
  EXPECT_EQ(r.raw_caption, kCotRaw);
  EXPECT_EQ(r.refined_caption, kCotRaw + " [refined]");
  EXPECT_EQ(count_backend_calls(r.trace, BackendKind::kCaptioner), 2u);
  EXPECT_EQ(count_backend_calls(r.trace, BackendKind::kRefiner), 1u);
  EXPECT_EQ(r.trace[1].output, kWhitenedHash + std::string("91613375"));
}

TEST(CaptionObject, DeterministicAcrossRuns) {
  const CaptionPipeline pipeline(make_mock_backends());
  const auto image = testing::solid_fixture();
  for (const bool cot : {true, false}) {
    const auto first = to_wire(without_durations(pipeline.caption_object(image, point_request(cot, true)))).dump();
    for (int i = 0; i < 4; ++i) {
      EXPECT_EQ(to_wire(without_durations(pipeline.caption_object(image, point_request(cot, true)))).dump(),
                first);
    }
  }
}

TEST(CaptionObject, RefinerCalledOnlyWhenRequested) {
  auto backends = make_mock_backends();
  auto counting = std::make_shared<CountingRefiner>();
  backends.refiner = counting;
  const CaptionPipeline pipeline(backends);
  const auto image = testing::solid_fixture();

  pipeline.caption_object(image, point_request(false, false));
  EXPECT_EQ(counting->calls, 0);

  auto req = point_request(false, true);
  req.controls.sentiment = Sentiment::kPositive;
  const auto r = pipeline.caption_object(image, req);
  EXPECT_EQ(counting->calls, 1);
  EXPECT_EQ(counting->last_prompt, build_refiner_prompt(r.raw_caption, req.controls).text);
}

TEST(CaptionObject, RefinerFailureFallsBack) {
  const auto image = testing::solid_fixture();
  for (const auto& script : std::vector<std::vector<std::string>>{{"I'm sorry, I can't."}, {}}) {
    auto backends = make_mock_backends();
    backends.refiner = std::make_shared<ScriptedRefiner>(script);
    const CaptionPipeline pipeline(backends);
    const auto r = pipeline.caption_object(image, point_request(true, true));
    EXPECT_TRUE(r.fallback_used);
    EXPECT_EQ(r.refined_caption, r.raw_caption);
    EXPECT_EQ(r.trace.back().name, StepName::kRefine);
  }
}

TEST(CaptionObject, SegmenterAndCaptionerFailuresAreHard) {
  const auto image = testing::solid_fixture();
  auto seg_down = make_mock_backends();
  seg_down.segmenter = std::make_shared<FailingSegmenter>();
  try {
    CaptionPipeline(seg_down).caption_object(image, point_request(true, true));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBackendUnavailable);
  }

  auto cap_down = make_mock_backends();
  cap_down.captioner = std::make_shared<FailingCaptioner>();
  EXPECT_THROW(CaptionPipeline(cap_down).caption_object(image, point_request(false, true)), Error);
}

TEST(CaptionObject, ControlVariants) {
  const CaptionPipeline pipeline(make_mock_backends());
  const auto image = testing::solid_fixture();

  auto box = point_request(false, false);
  box.control = BoxRegion{70, 60, 20, 10};
  EXPECT_EQ(pipeline.caption_object(image, box).bbox, (BoxRegion{20, 10, 70, 60}));

  auto traj = point_request(false, false);
  traj.control = Trajectory{{{10, 10}, {30, 40}}};
  EXPECT_EQ(pipeline.caption_object(image, traj).bbox, (BoxRegion{10, 10, 30, 40}));

  auto negatives = point_request(false, false);
  negatives.control = PointSet{{{5, 5, PointLabel::kNegative}}};
  try {
    pipeline.caption_object(image, negatives);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyControl);
  }
}

TEST(CaptionObject, WhitenStrategyForNoCot) {
  PipelineConfig cfg;
  cfg.non_cot_strategy = NonCotStrategy::kWhiten;
  const CaptionPipeline pipeline(make_mock_backends(), cfg);
  const auto r = pipeline.caption_object(testing::solid_fixture(), point_request(false, false));
  EXPECT_EQ(step_names(r.trace), (std::vector<std::string>{"segment", "whiten", "caption"}));
  EXPECT_EQ(r.raw_caption, std::string("mock-caption(h=") + kWhitenedHash + "|p=)");
}

TEST(RenderResult, Verbosity) {
  const CaptionPipeline pipeline(make_mock_backends());
  const auto r = pipeline.caption_object(testing::solid_fixture(), point_request(true, true));
  EXPECT_EQ(render_result(r, Verbosity::kText), *r.refined_caption);

  const auto summary = ojson::parse(render_result(r, Verbosity::kSummary));
  EXPECT_FALSE(summary.contains("trace"));

  const auto full = render_result(r, Verbosity::kFull);
  std::size_t pos = 0;
  for (const auto* step : {"\"segment\"", "\"whiten\"", "\"category\"", "\"crop\"", "\"caption\"", "\"refine\""}) {
    const auto next = full.find(step, pos);
    ASSERT_NE(next, std::string::npos) << step;
    pos = next;
  }
  EXPECT_EQ(caption_result_from_wire(ojson::parse(full)), r);

  auto no_refine = pipeline.caption_object(testing::solid_fixture(), point_request(false, false));
  EXPECT_EQ(render_result(no_refine, Verbosity::kText), no_refine.raw_caption);
  EXPECT_EQ(caption_result_from_wire(ojson::parse(render_result(no_refine, Verbosity::kFull))), no_refine);
}

}  // namespace
}  // namespace capengine

// SPDX-License-Identifier: Apache-2.0
#include "capengine/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "capengine/error.hpp"
#include "capengine/image_codec.hpp"
#include "capengine/text.hpp"
#include "capengine/wire.hpp"

namespace capengine {

namespace {

constexpr std::size_t kDigestChars = 16;

std::string short_digest(const RgbImage& image) { return raster_digest(image).substr(0, kDigestChars); }

std::string box_text(const BoxRegion& b) {
  return "[" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
         std::to_string(b.y1) + "]";
}

std::size_t rle_area(const RleMask& rle) {
  std::size_t area = 0;
  for (std::size_t i = 1; i < rle.counts.size(); i += 2) area += rle.counts[i];
  return area;
}

/// Appends a step to the trace and times the callable that produces its output.
class TraceRecorder {
 public:
  explicit TraceRecorder(StepTrace& trace) : trace_(trace) {}

  template <typename Fn>
  auto record(StepName name, std::optional<BackendKind> backend, std::string input_digest, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto [value, output] = fn();
    const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
    trace_.push_back({name, backend, std::move(input_digest), std::move(output), elapsed.count()});
    return value;
  }

 private:
  StepTrace& trace_;
};

}  // namespace

std::string_view to_string(StepName name) {
  switch (name) {
    case StepName::kSegment: return "segment";
    case StepName::kWhiten: return "whiten";
    case StepName::kCategory: return "category";
    case StepName::kCrop: return "crop";
    case StepName::kCaption: return "caption";
    case StepName::kRefine: return "refine";
  }
  return "unknown";
}

std::optional<StepName> parse_step_name(std::string_view text) {
  for (const auto n : {StepName::kSegment, StepName::kWhiten, StepName::kCategory, StepName::kCrop,
                       StepName::kCaption, StepName::kRefine}) {
    if (to_string(n) == text) return n;
  }
  return std::nullopt;
}

std::size_t count_backend_calls(const StepTrace& trace, BackendKind kind) {
  return static_cast<std::size_t>(std::count_if(
      trace.begin(), trace.end(), [&](const TraceStep& s) { return s.backend == kind; }));
}

SegmentationCandidate choose_mask(const std::vector<SegmentationCandidate>& candidates) {
  if (candidates.empty()) throw Error(ErrorCode::kNoCandidates, "segmenter produced no candidates");
  std::size_t best = 0;
  std::size_t best_area = rle_area(candidates[0].mask);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto area = rle_area(candidates[i].mask);
    const double s = candidates[i].score;
    const double bs = candidates[best].score;
    if (s > bs || (s == bs && area > best_area)) {
      best = i;
      best_area = area;
    }
  }
  if (best_area == 0) throw Error(ErrorCode::kEmptyMask, "selected mask is empty");
  return candidates[best];
}

CaptionPipeline::CaptionPipeline(BackendSet backends, PipelineConfig config)
    : backends_(std::move(backends)), config_(config) {
  if (!backends_.segmenter || !backends_.captioner || !backends_.refiner) {
    throw Error(ErrorCode::kConfig, "pipeline needs segmenter, captioner and refiner backends");
  }
  if (config_.margin_ratio < 0.0) throw Error(ErrorCode::kConfig, "margin_ratio must be >= 0");
}

RegionCaption CaptionPipeline::caption_region(const RgbImage& image, const BitMask& mask,
                                              bool use_cot) const {
  RegionCaption out;
  TraceRecorder rec(out.trace);
  const auto bbox = mask_bbox(mask);
  auto& captioner = *backends_.captioner;

  const auto whiten = [&] {
    return rec.record(StepName::kWhiten, std::nullopt, short_digest(image), [&] {
      auto white = whiten_background(image, mask);
      auto digest = short_digest(white);
      return std::pair{std::move(white), std::move(digest)};
    });
  };
  const auto crop = [&] {
    const auto window = crop_window(bbox, config_.margin_ratio, image.dims());
    return rec.record(StepName::kCrop, std::nullopt, short_digest(image), [&] {
      return std::pair{crop_image(image, window), "window=" + box_text(window)};
    });
  };
  const auto caption = [&](StepName step, const RgbImage& region, const std::string& prefix) {
    return rec.record(step, BackendKind::kCaptioner, short_digest(region), [&] {
      auto text = captioner.caption(region, prefix);
      if (trim(text).empty()) throw Error(ErrorCode::kEmptyCaption, "captioner returned empty text");
      return std::pair{text, text};
    });
  };

  if (use_cot) {
    // Step 1 names the object on the whitened full frame; step 2 describes
    // it from the margin crop of the original, conditioned on that name.
    const auto whitened = whiten();
    const auto category = caption(StepName::kCategory, whitened, build_cot_category_prompt().text);
    const auto region = crop();
    out.raw_caption = caption(StepName::kCaption, region, build_cot_caption_prompt(category).text);
    out.category = category;
  } else {
    const auto region = config_.non_cot_strategy == NonCotStrategy::kWhiten ? whiten() : crop();
    out.raw_caption = caption(StepName::kCaption, region, "");
  }
  return out;
}

CaptionResult CaptionPipeline::caption_object(const RgbImage& image, const CaptionRequest& request) const {
  validate(request.controls);
  CaptionResult result;
  TraceRecorder rec(result.trace);

  const auto prompt = normalize_control(request.control, image.dims(), config_.normalize);
  const auto chosen = rec.record(StepName::kSegment, BackendKind::kSegmenter, short_digest(image), [&] {
    auto best = choose_mask(backends_.segmenter->segment(image, prompt));
    auto mask = rle_decode(best.mask);
    if (mask.dims() != image.dims()) {
      throw Error(ErrorCode::kMalformedResponse, "segmenter mask dimensions differ from the image");
    }
    char score[32];
    std::snprintf(score, sizeof(score), "%.4f", best.score);
    auto summary = "score=" + std::string(score) + " area=" + std::to_string(mask_area(mask)) +
                   " bbox=" + box_text(mask_bbox(mask));
    return std::pair{std::pair{std::move(best.mask), std::move(mask)}, std::move(summary)};
  });
  result.mask = chosen.first;
  const BitMask& mask = chosen.second;
  result.bbox = mask_bbox(mask);

  auto region = caption_region(image, mask, request.use_cot);
  result.raw_caption = std::move(region.raw_caption);
  result.category = std::move(region.category);
  result.trace.insert(result.trace.end(), region.trace.begin(), region.trace.end());

  if (request.refine) {
    const auto refiner_prompt = build_refiner_prompt(result.raw_caption, request.controls);
    result.refined_caption = rec.record(
        StepName::kRefine, BackendKind::kRefiner, sha256_hex(refiner_prompt.text).substr(0, kDigestChars), [&] {
          try {
            auto text = backends_.refiner->refine(refiner_prompt);
            return std::pair{text, text};
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kRefusal && e.code() != ErrorCode::kBackendUnavailable) throw;
            result.fallback_used = true;
            return std::pair{result.raw_caption, "fallback: " + std::string(e.what())};
          }
        });
  }
  return result;
}

std::string render_result(const CaptionResult& result, Verbosity verbosity) {
  if (verbosity == Verbosity::kText) return result.refined_caption.value_or(result.raw_caption);
  return to_wire(result, verbosity == Verbosity::kFull).dump();
}

}  // namespace capengine

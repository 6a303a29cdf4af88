// SPDX-License-Identifier: Apache-2.0
//
// The captioning pipeline: visual control -> segmenter mask -> captioner
// (optionally through the two-step visual chain of thought) -> text refiner.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "capengine/backends.hpp"
#include "capengine/geometry.hpp"
#include "capengine/prompts.hpp"

namespace capengine {

enum class StepName { kSegment, kWhiten, kCategory, kCrop, kCaption, kRefine };

std::string_view to_string(StepName name);
std::optional<StepName> parse_step_name(std::string_view text);

struct TraceStep {
  StepName name = StepName::kSegment;
  std::optional<BackendKind> backend;
  std::string input_digest;
  std::string output;
  double duration_ms = 0.0;
  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

using StepTrace = std::vector<TraceStep>;

/// Number of trace steps served by the given backend.
std::size_t count_backend_calls(const StepTrace& trace, BackendKind kind);

struct CaptionRequest {
  std::string image_id;
  VisualControl control;
  LanguageControls controls;
  bool use_cot = true;
  bool refine = true;
};

struct CaptionResult {
  RleMask mask;
  BoxRegion bbox;
  std::string raw_caption;
  std::optional<std::string> category;
  std::optional<std::string> refined_caption;
  bool fallback_used = false;
  StepTrace trace;
  friend bool operator==(const CaptionResult&, const CaptionResult&) = default;
};

/// How the region is presented to the captioner when the chain of thought
/// is disabled.
enum class NonCotStrategy { kCrop, kWhiten };

struct PipelineConfig {
  double margin_ratio = kDefaultMarginRatio;
  NonCotStrategy non_cot_strategy = NonCotStrategy::kCrop;
  NormalizeOptions normalize;
};

/// Highest score wins; ties go to the larger mask, then the lower index.
/// Throws NoCandidates on an empty list and EmptyMask if the winner is empty.
SegmentationCandidate choose_mask(const std::vector<SegmentationCandidate>& candidates);

/// Raw caption of one masked region, before refinement.
struct RegionCaption {
  std::string raw_caption;
  std::optional<std::string> category;
  StepTrace trace;
};

class CaptionPipeline {
 public:
  explicit CaptionPipeline(BackendSet backends, PipelineConfig config = {});

  CaptionResult caption_object(const RgbImage& image, const CaptionRequest& request) const;

  /// Captioner stage only, for a mask the caller already has.
  RegionCaption caption_region(const RgbImage& image, const BitMask& mask, bool use_cot) const;

  const PipelineConfig& config() const { return config_; }
  const BackendSet& backends() const { return backends_; }

 private:
  BackendSet backends_;
  PipelineConfig config_;
};

enum class Verbosity {
  kText,     // final caption only
  kSummary,  // structured record without the trace
  kFull,     // structured record with the trace
};

std::string render_result(const CaptionResult& result, Verbosity verbosity);

}  // namespace capengine

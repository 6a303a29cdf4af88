// SPDX-License-Identifier: Apache-2.0
//
// Caption everything: segment the whole image, caption each region, merge the
// region captions with OCR scene text and have the refiner summarize them.
#pragma once

#include <vector>

#include "capengine/pipeline.hpp"
#include "capengine/records.hpp"

namespace capengine {

struct ParagraphOptions {
  std::size_t max_regions = 20;
  bool use_cot = false;
  double min_confidence_ocr = 0.3;
};

struct ParagraphConfig {
  int parallelism = 4;
  MaskFilterOptions filter;
};

struct ParagraphResult {
  std::vector<DenseCaption> dense;
  std::vector<OcrLine> ocr;
  PromptText prompt;
  std::string paragraph;
  bool fallback_used = false;
  friend bool operator==(const ParagraphResult&, const ParagraphResult&) = default;
};

class ParagraphEngine {
 public:
  ParagraphEngine(CaptionPipeline pipeline, ParagraphConfig config = {});

  std::vector<BitMask> segment_all(const RgbImage& image) const;

  /// Region captions in descending area order, ids `r1`, `r2`, ... When the
  /// segmenter yields nothing usable a single full-image region is returned.
  /// `masks`, when given, replaces the segment_everything call.
  std::vector<DenseCaption> dense_caption(const RgbImage& image, const ParagraphOptions& options,
                                          const std::vector<BitMask>* masks = nullptr) const;

  ParagraphResult caption_everything(const RgbImage& image, const LanguageControls& controls,
                                     const ParagraphOptions& options,
                                     const std::vector<BitMask>* masks = nullptr) const;

 private:
  CaptionPipeline pipeline_;
  ParagraphConfig config_;
};

}  // namespace capengine

// SPDX-License-Identifier: Apache-2.0
#include "capengine/paragraph.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "capengine/error.hpp"
#include "capengine/text.hpp"

namespace capengine {

ParagraphEngine::ParagraphEngine(CaptionPipeline pipeline, ParagraphConfig config)
    : pipeline_(std::move(pipeline)), config_(config) {
  if (config_.parallelism < 1) throw Error(ErrorCode::kConfig, "parallelism must be >= 1");
  if (!pipeline_.backends().ocr) throw Error(ErrorCode::kConfig, "paragraph captioning needs an OCR backend");
}

std::vector<BitMask> ParagraphEngine::segment_all(const RgbImage& image) const {
  auto masks = pipeline_.backends().segmenter->segment_everything(image);
  for (const auto& m : masks) {
    if (m.dims() != image.dims()) {
      throw Error(ErrorCode::kMalformedResponse, "segment_everything mask dimensions differ from image");
    }
  }
  return masks;
}

std::vector<DenseCaption> ParagraphEngine::dense_caption(const RgbImage& image,
                                                         const ParagraphOptions& options,
                                                         const std::vector<BitMask>* masks) const {
  const auto raw = masks ? *masks : segment_all(image);
  // filter_masks already returns area-descending order with index tiebreak.
  auto kept = filter_masks(raw, config_.filter);
  std::erase_if(kept, [](const BitMask& m) { return mask_area(m) == 0; });
  if (kept.empty()) kept.emplace_back(image.dims(), true);
  if (options.max_regions > 0 && kept.size() > options.max_regions) kept.resize(options.max_regions);

  std::vector<DenseCaption> out(kept.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  const auto worker = [&] {
    for (std::size_t i = next++; i < kept.size(); i = next++) {
      try {
        auto region = pipeline_.caption_region(image, kept[i], options.use_cot);
        out[i] = DenseCaption{"r" + std::to_string(i + 1), mask_bbox(kept[i]), mask_area(kept[i]),
                              std::move(region.raw_caption), rle_encode(kept[i])};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = kept.size();
      }
    }
  };

  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(config_.parallelism), kept.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

ParagraphResult ParagraphEngine::caption_everything(const RgbImage& image, const LanguageControls& controls,
                                                    const ParagraphOptions& options,
                                                    const std::vector<BitMask>* masks) const {
  validate(controls);
  ParagraphResult result;
  result.dense = dense_caption(image, options, masks);

  for (auto& line : pipeline_.backends().ocr->read(image)) {
    if (line.confidence >= options.min_confidence_ocr) result.ocr.push_back(std::move(line));
  }
  result.prompt = build_paragraph_prompt(result.dense, result.ocr);

  try {
    result.paragraph = pipeline_.backends().refiner->refine(result.prompt);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kRefusal && e.code() != ErrorCode::kBackendUnavailable) throw;
    std::vector<std::string> captions;
    for (const auto& d : result.dense) captions.push_back(d.caption);
    result.paragraph = join(captions, "; ");
    result.fallback_used = true;
  }
  return result;
}

}  // namespace capengine

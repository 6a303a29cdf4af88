// SPDX-License-Identifier: Apache-2.0
//
// Fixed prompt templates for the captioner and refiner backends. The exact
// wording is part of the public contract (see docs/prompts.md) and is pinned
// by the golden files under tests/golden/prompts/.
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "capengine/geometry.hpp"
#include "capengine/records.hpp"

namespace capengine {

enum class Sentiment { kNeutral, kPositive, kNegative };
enum class Factuality { kFactual, kImagination };

struct LanguageControls {
  Sentiment sentiment = Sentiment::kNeutral;
  std::optional<int> length;  // word budget
  std::string language = "en";
  Factuality factuality = Factuality::kFactual;
  friend bool operator==(const LanguageControls&, const LanguageControls&) = default;
};

/// Throws InvalidArgument for a non-positive length or an empty / non-ASCII
/// language tag.
void validate(const LanguageControls& controls);

std::string_view to_string(Sentiment s);
std::string_view to_string(Factuality f);
std::optional<Sentiment> parse_sentiment(std::string_view text);
std::optional<Factuality> parse_factuality(std::string_view text);

struct PromptText {
  std::string text;
  friend bool operator==(const PromptText&, const PromptText&) = default;
};

PromptText build_refiner_prompt(std::string_view raw_caption, const LanguageControls& controls);
PromptText build_cot_category_prompt();
PromptText build_cot_caption_prompt(std::string_view category);
PromptText build_chat_system_prompt(std::string_view object_caption, const ImageDims& dims,
                                    const std::vector<std::string>& tool_names);
PromptText build_paragraph_prompt(const std::vector<DenseCaption>& dense,
                                  const std::vector<OcrLine>& ocr);

/// Human-readable description used in the chat system prompt's tool list.
std::string_view tool_description(std::string_view tool_name);

}  // namespace capengine

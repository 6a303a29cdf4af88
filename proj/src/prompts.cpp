// SPDX-License-Identifier: Apache-2.0
#include "capengine/prompts.hpp"

#include <algorithm>
#include <map>

#include "capengine/error.hpp"
#include "capengine/text.hpp"

namespace capengine {

namespace {

constexpr std::string_view kRefinerTemplate =
    "Revise the following image caption so that it {directives}. "
    "Reply with only the revised caption.\nCaption: {raw_caption}";

constexpr std::string_view kCotCategoryPrompt =
    "Question: What is the name of the object in this image? Answer:";

constexpr std::string_view kCotCaptionTemplate =
    "Question: Describe the {category} in this image in one sentence. Answer:";

constexpr std::string_view kChatSystemTemplate =
    "You are a visual assistant answering questions about one object selected in an image "
    "of {width}x{height} pixels.\n"
    "Object description: {caption}\n"
    "\n"
    "{tools}\n"
    "\n"
    "To use a tool, reply with exactly two lines:\n"
    "Action: <tool name>\n"
    "Action Input: <text>\n"
    "The tool result will be returned to you as a line \"Observation: <result>\".\n"
    "When you can answer the user, reply with:\n"
    "Final Answer: <text>";

constexpr std::string_view kParagraphInstruction =
    "Summarize the regions and scene text above into one coherent paragraph describing the "
    "whole image. Do not invent objects.";

// Single left-to-right pass: substituted values are never rescanned, so a
// caption containing braces cannot inject a placeholder.
std::string render(std::string_view tmpl, const std::map<std::string_view, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size() + 64);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find('}', open);
    out.append(tmpl.substr(pos, open - pos));
    const auto key = tmpl.substr(open + 1, close - open - 1);
    out.append(values.at(key));
    pos = close + 1;
  }
  return out;
}

}  // namespace

void validate(const LanguageControls& controls) {
  if (controls.length && *controls.length < 1) {
    throw Error(ErrorCode::kInvalidArgument, "length must be at least 1 word");
  }
  if (controls.language.empty() ||
      !std::all_of(controls.language.begin(), controls.language.end(),
                   [](char c) { return static_cast<unsigned char>(c) < 0x80; })) {
    throw Error(ErrorCode::kInvalidArgument, "language tag must be non-empty ASCII");
  }
}

std::string_view to_string(Sentiment s) {
  switch (s) {
    case Sentiment::kPositive: return "positive";
    case Sentiment::kNegative: return "negative";
    case Sentiment::kNeutral: break;
  }
  return "neutral";
}

std::string_view to_string(Factuality f) {
  return f == Factuality::kImagination ? "imagination" : "factual";
}

std::optional<Sentiment> parse_sentiment(std::string_view text) {
  if (text == "positive") return Sentiment::kPositive;
  if (text == "negative") return Sentiment::kNegative;
  if (text == "neutral") return Sentiment::kNeutral;
  return std::nullopt;
}

std::optional<Factuality> parse_factuality(std::string_view text) {
  if (text == "factual") return Factuality::kFactual;
  if (text == "imagination") return Factuality::kImagination;
  return std::nullopt;
}

PromptText build_refiner_prompt(std::string_view raw_caption, const LanguageControls& controls) {
  if (trim(raw_caption).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "raw caption is empty");
  }
  validate(controls);

  // Order is fixed: sentiment, factuality, length, language.
  std::vector<std::string> clauses;
  if (controls.sentiment != Sentiment::kNeutral) {
    clauses.push_back("has a " + std::string(to_string(controls.sentiment)) + " sentiment");
  }
  if (controls.factuality == Factuality::kImagination) {
    clauses.emplace_back("adds imaginative flourish");
  }
  if (controls.length) {
    clauses.push_back("uses at most " + std::to_string(*controls.length) + " words");
  }
  if (controls.language != "en") {
    clauses.push_back("is written in language \"" + controls.language + "\"");
  }
  const std::string directives =
      clauses.empty() ? std::string("keeps a neutral, factual tone") : join(clauses, ", ");

  return {render(kRefinerTemplate,
                 {{"directives", directives}, {"raw_caption", std::string(raw_caption)}})};
}

PromptText build_cot_category_prompt() { return {std::string(kCotCategoryPrompt)}; }

PromptText build_cot_caption_prompt(std::string_view category) {
  const auto cleaned = to_lower_ascii(trim(category));
  if (cleaned.empty()) throw Error(ErrorCode::kEmptyCategory, "category is empty");
  return {render(kCotCaptionTemplate, {{"category", cleaned}})};
}

std::string_view tool_description(std::string_view tool_name) {
  if (tool_name == "vqa") {
    return "answers a question about the selected object by looking at its image region";
  }
  return "no description available";
}

PromptText build_chat_system_prompt(std::string_view object_caption, const ImageDims& dims,
                                    const std::vector<std::string>& tool_names) {
  if (trim(object_caption).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "object caption is empty");
  }
  std::string tools;
  if (tool_names.empty()) {
    tools = "Available tools: none";
  } else {
    tools = "Available tools:";
    for (const auto& name : tool_names) {
      tools += "\n- " + name + ": " + std::string(tool_description(name));
    }
  }
  return {render(kChatSystemTemplate, {{"width", std::to_string(dims.width)},
                                       {"height", std::to_string(dims.height)},
                                       {"caption", std::string(object_caption)},
                                       {"tools", tools}})};
}

PromptText build_paragraph_prompt(const std::vector<DenseCaption>& dense,
                                  const std::vector<OcrLine>& ocr) {
  if (dense.empty()) throw Error(ErrorCode::kNoRegions, "paragraph prompt needs at least one region");
  std::string out;
  for (std::size_t i = 0; i < dense.size(); ++i) {
    const auto& b = dense[i].bbox;
    out += "Region " + std::to_string(i + 1) + " [" + std::to_string(b.x0) + "," +
           std::to_string(b.y0) + "," + std::to_string(b.x1) + "," + std::to_string(b.y1) +
           "]: " + dense[i].caption + "\n";
  }
  if (!ocr.empty()) {
    out += "Scene text: ";
    for (std::size_t i = 0; i < ocr.size(); ++i) {
      if (i) out += "; ";
      out += "\"" + ocr[i].text + "\"";
    }
    out += "\n";
  }
  out += kParagraphInstruction;
  return {out};
}

}  // namespace capengine

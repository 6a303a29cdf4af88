// SPDX-License-Identifier: Apache-2.0
#include <map>
#include <regex>

#include <gtest/gtest.h>

#include "capengine/error.hpp"
#include "capengine/prompts.hpp"
#include "prompt_cases.hpp"
#include "test_support.hpp"

namespace capengine {
namespace {

using testing::data_path;
using testing::prompt_cases;
using testing::read_text_file;

std::size_t occurrences(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

TEST(PromptGoldens, EveryCaseMatchesItsFile) {
  std::map<std::string, int> per_builder;
  for (const auto& c : prompt_cases()) {
    const auto expected = read_text_file(data_path("golden/prompts/" + c.golden));
    ASSERT_FALSE(expected.empty()) << c.golden;
    EXPECT_EQ(c.build().text, expected) << c.golden;
    ++per_builder[c.builder];
  }
  ASSERT_EQ(per_builder.size(), 5u);
  for (const auto& [builder, n] : per_builder) EXPECT_GE(n, 3) << builder;
}

TEST(PromptGoldens, Deterministic) {
  for (const auto& c : prompt_cases()) EXPECT_EQ(c.build(), c.build()) << c.golden;
}

TEST(RefinerPrompt, DirectiveOrderIsFixed) {
  LanguageControls a;
  a.language = "de";
  a.length = 3;
  a.sentiment = Sentiment::kPositive;
  LanguageControls b;
  b.sentiment = Sentiment::kPositive;
  b.length = 3;
  b.language = "de";
  EXPECT_EQ(build_refiner_prompt("x", a), build_refiner_prompt("x", b));
  const auto text = build_refiner_prompt("x", a).text;
  EXPECT_LT(text.find("positive"), text.find("at most 3"));
  EXPECT_LT(text.find("at most 3"), text.find("\"de\""));
}

TEST(RefinerPrompt, CaptionVerbatimAndValidated) {
  const std::string caption = "  A {weird} caption, with \"quotes\"  ";
  EXPECT_EQ(occurrences(build_refiner_prompt(caption, {}).text, caption), 1u);
  EXPECT_THROW(build_refiner_prompt("", {}), Error);

  LanguageControls zero;
  zero.length = 0;
  EXPECT_THROW(build_refiner_prompt("x", zero), Error);
  LanguageControls empty_lang;
  empty_lang.language = "";
  EXPECT_THROW(build_refiner_prompt("x", empty_lang), Error);
  LanguageControls non_ascii;
  non_ascii.language = "\xe4\xb8\xad";
  EXPECT_THROW(build_refiner_prompt("x", non_ascii), Error);
}

TEST(CotCaptionPrompt, EmptyCategory) {
  try {
    build_cot_caption_prompt("   ");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyCategory);
  }
}

TEST(ChatSystemPrompt, CaptionOnceAndGrammarPresent) {
  for (const std::vector<std::string>& tools : {std::vector<std::string>{}, std::vector<std::string>{"vqa"}}) {
    const auto text = build_chat_system_prompt("a shiny kettle", {10, 20}, tools).text;
    EXPECT_EQ(occurrences(text, "a shiny kettle"), 1u);
    EXPECT_NE(text.find("Action: <tool name>"), std::string::npos);
    EXPECT_NE(text.find("Action Input: <text>"), std::string::npos);
    EXPECT_NE(text.find("Final Answer: <text>"), std::string::npos);
    EXPECT_NE(text.find("10x20"), std::string::npos);
  }
  EXPECT_THROW(build_chat_system_prompt("", {1, 1}, {}), Error);
}

TEST(ParagraphPrompt, NoRegions) {
  try {
    build_paragraph_prompt({}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoRegions);
  }
}

TEST(Prompts, NoUnresolvedPlaceholders) {
  const std::regex placeholder(R"(\{(directives|raw_caption|category|width|height|caption|tools)\})");
  for (const auto& c : prompt_cases()) {
    const auto text = c.build().text;
    // Caller text may legitimately contain braces; only template slots count.
    EXPECT_FALSE(std::regex_search(text, placeholder)) << c.golden;
  }
}

}  // namespace
}  // namespace capengine

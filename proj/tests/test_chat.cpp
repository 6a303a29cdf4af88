// SPDX-License-Identifier: Apache-2.0
#include <random>

#include <gtest/gtest.h>

#include "capengine/backends.hpp"
#include "capengine/chat.hpp"
#include "capengine/error.hpp"
#include "test_support.hpp"

namespace capengine {
namespace {

constexpr const char* kImageId = "0123456789abcdef0123456789abcdef0123456789abcdef0123456789abcdef";

struct Fixture {
  explicit Fixture(std::vector<std::string> script, int max_tool_calls = 3)
      : image(std::make_shared<const RgbImage>(testing::solid_fixture())),
        refiner(std::make_shared<ScriptedRefiner>(std::move(script))),
        engine(refiner, std::make_shared<MockVqa>(),
               [this](const std::string& id) { return id == kImageId ? image : nullptr; },
               ChatConfig{max_tool_calls, kDefaultMarginRatio}),
        session(engine.start_session(kImageId, rle_encode(BitMask::from_box({100, 100}, {38, 38, 62, 62})),
                                     "a grey square")) {}

  std::shared_ptr<const RgbImage> image;
  std::shared_ptr<ScriptedRefiner> refiner;
  ChatEngine engine;
  ChatSession session;
};

std::vector<std::string> script_file(const std::string& name) {
  return ScriptedRefiner::load_script(testing::data_path("fixtures/" + name));
}

std::vector<ChatRole> roles(const ChatSession& s) {
  std::vector<ChatRole> out;
  for (const auto& m : s.messages) out.push_back(m.role);
  return out;
}

// --- parse_action -------------------------------------------------------------

TEST(ParseAction, Examples) {
  EXPECT_EQ(parse_action("Final Answer: it is red"), ParsedAction(FinalAnswer{"it is red"}));
  EXPECT_EQ(parse_action("Action: vqa\nAction Input: what color is it?"),
            ParsedAction(ToolDirective{"vqa", "what color is it?"}));
  EXPECT_EQ(parse_action("gibberish without markers"), ParsedAction(FinalAnswer{"gibberish without markers"}));
}

TEST(ParseAction, GrammarDetails) {
  // First match wins; an answer swallows everything after it.
  EXPECT_EQ(parse_action("Final Answer: a\nAction: vqa\nAction Input: q"),
            ParsedAction(FinalAnswer{"a\nAction: vqa\nAction Input: q"}));
  EXPECT_EQ(parse_action("Action: vqa\nAction Input: q\nFinal Answer: a"), ParsedAction(ToolDirective{"vqa", "q"}));
  // Final answers keep the following lines.
  EXPECT_EQ(parse_action("Thought: done\nFinal Answer: line one\nline two\n"),
            ParsedAction(FinalAnswer{"line one\nline two"}));
  // Action Input may trail by at most two lines.
  EXPECT_EQ(parse_action("Action: vqa\nThought: hmm\nAction Input: q"), ParsedAction(ToolDirective{"vqa", "q"}));
  EXPECT_EQ(parse_action("Action: vqa\na\nb\nAction Input: q"),
            ParsedAction(FinalAnswer{"Action: vqa\na\nb\nAction Input: q"}));
  EXPECT_EQ(parse_action("Action: vqa"), ParsedAction(FinalAnswer{"Action: vqa"}));
  EXPECT_EQ(parse_action("  \r\n  "), ParsedAction(FinalAnswer{""}));
  EXPECT_EQ(parse_action("Action: vqa\r\nAction Input: q\r\n"), ParsedAction(ToolDirective{"vqa", "q"}));
}

TEST(ParseAction, TotalOverRandomText) {
  const std::vector<std::string> pieces{"Final Answer:", "Action:", "Action Input:", "Observation:", "vqa",
                                        "\n", "\r\n", " ", "\t", "x", "\xff\xfe", std::string(1, '\0'), ":"};
  std::mt19937 rng(99);
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<int> len(0, 30);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int i = 0; i < 1000; ++i) {
    std::string text;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) {
      text += (k % 3 == 0) ? std::string(1, static_cast<char>(byte(rng))) : pieces[pick(rng)];
    }
    ParsedAction parsed = FinalAnswer{};
    EXPECT_NO_THROW(parsed = parse_action(text));
    if (const auto* d = std::get_if<ToolDirective>(&parsed)) EXPECT_FALSE(d->tool.empty());
  }
}

// --- sessions -----------------------------------------------------------------

TEST(ChatSession, StartRules) {
  Fixture f({});
  EXPECT_NE(f.session.system_prompt.text.find("a grey square"), std::string::npos);
  EXPECT_TRUE(f.session.messages.empty());
  EXPECT_FALSE(f.session.busy);
  EXPECT_EQ(f.session.id.substr(f.session.id.find('-')), "-01234567");

  const auto other = f.engine.start_session(kImageId, f.session.mask, "x");
  EXPECT_NE(other.id, f.session.id);

  auto code = [&](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kConfig;
  };
  EXPECT_EQ(code([&] { f.engine.start_session("feed", f.session.mask, "x"); }), ErrorCode::kUnknownImage);
  EXPECT_EQ(code([&] { f.engine.start_session(kImageId, f.session.mask, ""); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code([&] { f.engine.start_session(kImageId, RleMask{{5, 5}, {25}}, "x"); }),
            ErrorCode::kDimsMismatch);
}

TEST(ChatTurn, ImmediateFinalAnswer) {
  Fixture f(script_file("chat_final.script"));
  const auto turn = f.engine.chat_turn(f.session, "What is it?");
  EXPECT_EQ(turn.reply, "It is a grey square.");
  EXPECT_TRUE(turn.tool_calls.empty());
  EXPECT_EQ(roles(f.session), (std::vector<ChatRole>{ChatRole::kUser, ChatRole::kAssistant}));
  EXPECT_EQ(f.refiner->prompts_seen().front(),
            f.session.system_prompt.text + "\n\nUser: What is it?\nAssistant:");
}

TEST(ChatTurn, OneToolCall) {
  Fixture f(script_file("chat_one_tool.script"));
  const auto turn = f.engine.chat_turn(f.session, "What color?");
  ASSERT_EQ(turn.tool_calls.size(), 1u);
  EXPECT_EQ(turn.tool_calls[0], (ToolCall{"vqa", "what color is it?", "mock-vqa(what color is it?)"}));
  EXPECT_EQ(turn.reply, "It is grey.");
  EXPECT_EQ(roles(f.session), (std::vector<ChatRole>{ChatRole::kUser, ChatRole::kTool, ChatRole::kAssistant}));
  EXPECT_EQ(f.session.messages[1].text,
            "Action: vqa\nAction Input: what color is it?\nObservation: mock-vqa(what color is it?)");
  ASSERT_EQ(f.refiner->prompts_seen().size(), 2u);
  const auto& second = f.refiner->prompts_seen()[1];
  EXPECT_NE(second.find("\nObservation: mock-vqa(what color is it?)\nAssistant:"), std::string::npos);
}

TEST(ChatTurn, ToolCallsAreBounded) {
  Fixture f(script_file("chat_always_tool.script"));
  const auto turn = f.engine.chat_turn(f.session, "Tell me everything");
  ASSERT_EQ(turn.tool_calls.size(), 3u);
  EXPECT_EQ(turn.reply, "mock-vqa(is it shiny?)");
  EXPECT_EQ(f.refiner->consumed(), 3u);
  EXPECT_EQ(f.session.messages.size(), 5u);
}

TEST(ChatTurn, BoundHoldsForAnyLimit) {
  std::mt19937 rng(5);
  std::bernoulli_distribution tool(0.7);
  for (int limit = 0; limit <= 5; ++limit) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::string> script;
      for (int k = 0; k < 8; ++k) {
        script.push_back(tool(rng) ? "Action: vqa\nAction Input: q" + std::to_string(k) : "Final Answer: done");
      }
      Fixture f(script, limit);
      const auto turn = f.engine.chat_turn(f.session, "hi");
      EXPECT_LE(static_cast<int>(turn.tool_calls.size()), limit);
      EXPECT_FALSE(turn.reply.empty());
      EXPECT_EQ(f.session.messages.front().role, ChatRole::kUser);
      EXPECT_EQ(f.session.messages.back().role, ChatRole::kAssistant);
    }
  }
}

TEST(ChatTurn, UnknownToolFallsBackToAnswer) {
  Fixture f({"Action: painter\nAction Input: draw it"});
  const auto turn = f.engine.chat_turn(f.session, "Draw?");
  EXPECT_TRUE(turn.tool_calls.empty());
  EXPECT_EQ(turn.reply, "Action: painter\nAction Input: draw it");
}

TEST(ChatTurn, RegisteredToolsAreCallable) {
  Fixture f({"Action: size\nAction Input: w", "Final Answer: ok"});
  f.engine.register_tool("size", [](const RgbImage& crop, std::string_view) {
    return std::to_string(crop.dims().width) + "x" + std::to_string(crop.dims().height);
  });
  const auto turn = f.engine.chat_turn(f.session, "How big?");
  ASSERT_EQ(turn.tool_calls.size(), 1u);
  EXPECT_EQ(turn.tool_calls[0].output, "33x33");
}

TEST(ChatTurn, RefusalYieldsApology) {
  Fixture f({"I cannot discuss this."});
  const auto turn = f.engine.chat_turn(f.session, "Why?");
  EXPECT_EQ(turn.reply, kChatApology);
  EXPECT_EQ(f.session.messages.back().text, kChatApology);
}

TEST(ChatTurn, UnavailableRefinerLeavesSessionUntouched) {
  Fixture f({});
  EXPECT_THROW(f.engine.chat_turn(f.session, "hello"), Error);
  EXPECT_TRUE(f.session.messages.empty());
  EXPECT_FALSE(f.session.busy);
}

TEST(ChatTurn, BusyAndEmptyMessage) {
  Fixture f({"Final Answer: a", "Final Answer: b"});
  f.session.busy = true;
  try {
    f.engine.chat_turn(f.session, "hi");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSessionBusy);
  }
  f.session.busy = false;
  EXPECT_THROW(f.engine.chat_turn(f.session, "   "), Error);
  EXPECT_EQ(f.engine.chat_turn(f.session, "hi").reply, "a");
  EXPECT_EQ(f.engine.chat_turn(f.session, "again").reply, "b");
  EXPECT_EQ(f.session.messages.size(), 4u);
  EXPECT_NE(f.refiner->prompts_seen()[1].find("\nUser: hi\nAssistant: a\nUser: again\nAssistant:"),
            std::string::npos);
}

}  // namespace
}  // namespace capengine

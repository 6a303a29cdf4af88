// SPDX-License-Identifier: Apache-2.0
//
// Object-centric chat: a bounded tool-calling loop in which the refiner LLM
// may ask the VQA model about the selected object before answering.
//
// The LLM replies in a small line-based grammar:
//
//   Action: <tool>
//   Action Input: <text>
//
// to call a tool (its result comes back as `Observation: <result>`), or
//
//   Final Answer: <text>
//
// to answer the user. Output matching neither form is taken as the answer.
#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "capengine/backends.hpp"
#include "capengine/geometry.hpp"
#include "capengine/prompts.hpp"

namespace capengine {

enum class ChatRole { kUser, kAssistant, kTool };

std::string_view to_string(ChatRole role);
std::optional<ChatRole> parse_chat_role(std::string_view text);

struct ChatMessage {
  ChatRole role = ChatRole::kUser;
  std::string text;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatSession {
  std::string id;
  std::string image_id;
  RleMask mask;
  std::string seed_caption;
  PromptText system_prompt;
  std::vector<ChatMessage> messages;
  bool busy = false;
};

struct ToolCall {
  std::string tool;
  std::string input;
  std::string output;
  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct ToolDirective {
  std::string tool;
  std::string input;
  friend bool operator==(const ToolDirective&, const ToolDirective&) = default;
};

struct FinalAnswer {
  std::string text;
  friend bool operator==(const FinalAnswer&, const FinalAnswer&) = default;
};

using ParsedAction = std::variant<ToolDirective, FinalAnswer>;

/// Total: never throws, every input maps to a directive or an answer.
ParsedAction parse_action(std::string_view llm_output) noexcept;

struct ChatConfig {
  int max_tool_calls = 3;
  double margin_ratio = kDefaultMarginRatio;
};

struct ChatTurnResult {
  std::string reply;
  std::vector<ToolCall> tool_calls;
};

inline constexpr std::string_view kChatApology =
    "Sorry, I could not find an answer about this object.";

/// Returns nullptr for unknown ids.
using ImageResolver = std::function<std::shared_ptr<const RgbImage>(const std::string& image_id)>;

/// A tool sees the object's margin crop and the LLM-provided input.
using ChatTool = std::function<std::string(const RgbImage& object_crop, std::string_view input)>;

/// Tool message stored in the session: the call plus its observation.
std::string format_tool_message(const ToolCall& call);

class ChatEngine {
 public:
  /// Registers the `vqa` tool backed by `vqa`.
  ChatEngine(std::shared_ptr<Refiner> refiner, std::shared_ptr<VqaModel> vqa, ImageResolver images,
             ChatConfig config = {});

  void register_tool(std::string name, ChatTool tool);
  std::vector<std::string> tool_names() const;

  /// Throws UnknownImage, DimsMismatch (mask vs image) or InvalidArgument
  /// (empty caption).
  ChatSession start_session(const std::string& image_id, const RleMask& mask,
                            const std::string& seed_caption);

  /// Runs one user turn. Throws SessionBusy if the session already has a
  /// turn in flight; the session is only updated when the turn completes.
  ChatTurnResult chat_turn(ChatSession& session, std::string_view user_message);

  /// Transcript sent to the LLM: system prompt, prior messages, the pending
  /// user message and this turn's tool exchanges, ending with `Assistant:`.
  static std::string build_transcript(const ChatSession& session,
                                      const std::vector<ChatMessage>& pending);

  /// Session ids are `s<N>-<first 8 hex of image id>`; N continues from here.
  void set_next_session_number(std::uint64_t n) { next_session_.store(n); }

  const ChatConfig& config() const { return config_; }

 private:
  std::shared_ptr<Refiner> refiner_;
  ImageResolver images_;
  ChatConfig config_;
  std::map<std::string, ChatTool, std::less<>> tools_;
  std::atomic<std::uint64_t> next_session_{1};
};

}  // namespace capengine

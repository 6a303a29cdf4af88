// SPDX-License-Identifier: Apache-2.0
#include "capengine/chat.hpp"

#include "capengine/error.hpp"
#include "capengine/text.hpp"

namespace capengine {

namespace {

constexpr std::string_view kFinalMarker = "Final Answer:";
constexpr std::string_view kActionMarker = "Action:";
constexpr std::string_view kInputMarker = "Action Input:";

std::string_view ltrim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

bool has_prefix(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

/// Clears the busy flag on every exit path of a turn.
class BusyGuard {
 public:
  explicit BusyGuard(ChatSession& s) : session_(s) { session_.busy = true; }
  ~BusyGuard() { session_.busy = false; }
  BusyGuard(const BusyGuard&) = delete;
  BusyGuard& operator=(const BusyGuard&) = delete;

 private:
  ChatSession& session_;
};

}  // namespace

std::string_view to_string(ChatRole role) {
  switch (role) {
    case ChatRole::kUser: return "user";
    case ChatRole::kAssistant: return "assistant";
    case ChatRole::kTool: return "tool";
  }
  return "user";
}

std::optional<ChatRole> parse_chat_role(std::string_view text) {
  if (text == "user") return ChatRole::kUser;
  if (text == "assistant") return ChatRole::kAssistant;
  if (text == "tool") return ChatRole::kTool;
  return std::nullopt;
}

ParsedAction parse_action(std::string_view llm_output) noexcept {
  const auto lines = split_lines(llm_output);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = ltrim(lines[i]);
    if (has_prefix(line, kFinalMarker)) {
      std::string rest(line.substr(kFinalMarker.size()));
      for (std::size_t j = i + 1; j < lines.size(); ++j) rest += "\n" + lines[j];
      return FinalAnswer{std::string(trim(rest))};
    }
    if (has_prefix(line, kActionMarker)) {
      const auto tool = trim(line.substr(kActionMarker.size()));
      if (tool.empty()) continue;
      for (std::size_t j = i + 1; j < lines.size() && j <= i + 2; ++j) {
        const auto next = ltrim(lines[j]);
        if (has_prefix(next, kInputMarker)) {
          return ToolDirective{std::string(tool), std::string(trim(next.substr(kInputMarker.size())))};
        }
      }
    }
  }
  return FinalAnswer{std::string(trim(llm_output))};
}

std::string format_tool_message(const ToolCall& call) {
  return std::string(kActionMarker) + " " + call.tool + "\n" + std::string(kInputMarker) + " " +
         call.input + "\nObservation: " + call.output;
}

ChatEngine::ChatEngine(std::shared_ptr<Refiner> refiner, std::shared_ptr<VqaModel> vqa,
                       ImageResolver images, ChatConfig config)
    : refiner_(std::move(refiner)), images_(std::move(images)), config_(config) {
  if (!refiner_ || !vqa || !images_) throw Error(ErrorCode::kConfig, "chat needs refiner, vqa and images");
  if (config_.max_tool_calls < 0) throw Error(ErrorCode::kConfig, "max_tool_calls must be >= 0");
  register_tool("vqa", [vqa](const RgbImage& crop, std::string_view question) {
    return vqa->answer(crop, question);
  });
}

void ChatEngine::register_tool(std::string name, ChatTool tool) { tools_[std::move(name)] = std::move(tool); }

std::vector<std::string> ChatEngine::tool_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : tools_) names.push_back(name);
  return names;
}

ChatSession ChatEngine::start_session(const std::string& image_id, const RleMask& mask,
                                      const std::string& seed_caption) {
  const auto image = images_(image_id);
  if (!image) throw Error(ErrorCode::kUnknownImage, image_id);
  validate_rle(mask);
  if (mask.dims != image->dims()) throw Error(ErrorCode::kDimsMismatch, "mask does not match image");

  ChatSession session;
  session.system_prompt = build_chat_system_prompt(seed_caption, image->dims(), tool_names());
  session.id = "s" + std::to_string(next_session_.fetch_add(1)) + "-" + image_id.substr(0, 8);
  session.image_id = image_id;
  session.mask = mask;
  session.seed_caption = seed_caption;
  return session;
}

std::string ChatEngine::build_transcript(const ChatSession& session,
                                         const std::vector<ChatMessage>& pending) {
  std::string out = session.system_prompt.text + "\n";
  const auto append = [&](const ChatMessage& m) {
    switch (m.role) {
      case ChatRole::kUser: out += "\nUser: " + m.text; break;
      case ChatRole::kAssistant: out += "\nAssistant: " + m.text; break;
      case ChatRole::kTool: out += "\n" + m.text; break;
    }
  };
  for (const auto& m : session.messages) append(m);
  for (const auto& m : pending) append(m);
  out += "\nAssistant:";
  return out;
}

ChatTurnResult ChatEngine::chat_turn(ChatSession& session, std::string_view user_message) {
  if (session.busy) throw Error(ErrorCode::kSessionBusy, session.id);
  if (trim(user_message).empty()) throw Error(ErrorCode::kInvalidArgument, "empty chat message");
  BusyGuard guard(session);

  const auto image = images_(session.image_id);
  if (!image) throw Error(ErrorCode::kUnknownImage, session.image_id);
  const auto window = crop_window(mask_bbox(rle_decode(session.mask)), config_.margin_ratio, image->dims());
  const auto object_crop = crop_image(*image, window);

  std::vector<ChatMessage> pending{{ChatRole::kUser, std::string(user_message)}};
  ChatTurnResult result;
  std::optional<std::string> answer;

  for (int iteration = 0; iteration < config_.max_tool_calls; ++iteration) {
    std::string llm_output;
    try {
      llm_output = refiner_->refine(PromptText{build_transcript(session, pending)});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kRefusal) throw;
      answer = std::string(kChatApology);
      break;
    }

    auto action = parse_action(llm_output);
    if (const auto* directive = std::get_if<ToolDirective>(&action)) {
      const auto tool = tools_.find(directive->tool);
      if (tool == tools_.end() || trim(directive->input).empty()) {
        action = FinalAnswer{std::string(trim(llm_output))};
      } else {
        ToolCall call{directive->tool, directive->input, tool->second(object_crop, directive->input)};
        pending.push_back({ChatRole::kTool, format_tool_message(call)});
        result.tool_calls.push_back(std::move(call));
        continue;
      }
    }
    answer = std::get<FinalAnswer>(action).text;
    break;
  }

  if (!answer) {
    answer = result.tool_calls.empty() ? std::string(kChatApology) : result.tool_calls.back().output;
  }
  if (trim(*answer).empty()) answer = std::string(kChatApology);
  result.reply = *answer;

  pending.push_back({ChatRole::kAssistant, result.reply});
  session.messages.insert(session.messages.end(), pending.begin(), pending.end());
  return result;
}

}  // namespace capengine

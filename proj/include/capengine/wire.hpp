// SPDX-License-Identifier: Apache-2.0
//
// JSON wire schema shared by the HTTP service and the CLI's structured
// output. Field order is stable (ordered_json) so output is byte-comparable.
// Every *_from_wire function throws InvalidArgument on schema violations.
#pragma once

#include <nlohmann/json.hpp>

#include "capengine/chat.hpp"
#include "capengine/paragraph.hpp"
#include "capengine/pipeline.hpp"

namespace capengine {

using ojson = nlohmann::ordered_json;

ojson to_wire(const RleMask& rle);
RleMask rle_from_wire(const ojson& value);

ojson to_wire(const BoxRegion& box);
BoxRegion box_from_wire(const ojson& value);

/// Exactly one of `{"points":[[x,y,label01],...]}`, `{"box":[x0,y0,x1,y1]}`
/// or `{"trajectory":[[x,y],...]}`.
ojson to_wire(const VisualControl& control);
VisualControl control_from_wire(const ojson& value);

/// `{"sentiment","length","language","factuality"}`, every field optional.
ojson to_wire(const LanguageControls& controls);
LanguageControls controls_from_wire(const ojson& value);

ojson to_wire(const CaptionResult& result, bool include_trace = true);
CaptionResult caption_result_from_wire(const ojson& value);

ojson to_wire(const ParagraphResult& result);
ParagraphResult paragraph_result_from_wire(const ojson& value);
ParagraphOptions paragraph_options_from_wire(const ojson& value, ParagraphOptions defaults = {});

ojson to_wire(const ToolCall& call);
ojson to_wire(const ChatMessage& message);
ChatMessage chat_message_from_wire(const ojson& value);

/// Copy of the result with every trace duration zeroed.
CaptionResult without_durations(CaptionResult result);

}  // namespace capengine

// SPDX-License-Identifier: Apache-2.0
#include "capengine/wire.hpp"

#include "capengine/error.hpp"

namespace capengine {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); }

const ojson& field(const ojson& obj, const char* name) {
  if (!obj.is_object()) invalid(std::string("expected an object holding '") + name + "'");
  const auto it = obj.find(name);
  if (it == obj.end()) invalid(std::string("missing field '") + name + "'");
  return *it;
}

int as_int(const ojson& v, const char* what) {
  if (!v.is_number_integer()) invalid(std::string(what) + " must be an integer");
  return v.get<int>();
}

std::string as_string(const ojson& v, const char* what) {
  if (!v.is_string()) invalid(std::string(what) + " must be a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const ojson& obj, const char* name) {
  const auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return as_string(*it, name);
}

PixelPoint point_from_wire(const ojson& v) {
  if (!v.is_array() || v.size() < 2) invalid("point must be [x,y]");
  return {as_int(v[0], "x"), as_int(v[1], "y")};
}

}  // namespace

ojson to_wire(const RleMask& rle) {
  ojson out;
  out["w"] = rle.dims.width;
  out["h"] = rle.dims.height;
  out["counts"] = rle.counts;
  return out;
}

RleMask rle_from_wire(const ojson& value) {
  try {
    return rle_from_text(value.dump());
  } catch (const Error& e) {
    invalid(e.what());
  }
}

ojson to_wire(const BoxRegion& b) { return ojson::array({b.x0, b.y0, b.x1, b.y1}); }

BoxRegion box_from_wire(const ojson& value) {
  if (!value.is_array() || value.size() != 4) invalid("box must be [x0,y0,x1,y1]");
  return {as_int(value[0], "x0"), as_int(value[1], "y0"), as_int(value[2], "x1"), as_int(value[3], "y1")};
}

ojson to_wire(const VisualControl& control) {
  ojson out;
  if (const auto* set = std::get_if<PointSet>(&control)) {
    out["points"] = ojson::array();
    for (const auto& p : set->points) {
      out["points"].push_back({p.x, p.y, p.label == PointLabel::kPositive ? 1 : 0});
    }
  } else if (const auto* box = std::get_if<BoxRegion>(&control)) {
    out["box"] = to_wire(*box);
  } else {
    out["trajectory"] = ojson::array();
    for (const auto& p : std::get<Trajectory>(control).points) out["trajectory"].push_back({p.x, p.y});
  }
  return out;
}

VisualControl control_from_wire(const ojson& value) {
  if (!value.is_object() || value.size() != 1) {
    invalid("control must hold exactly one of 'points', 'box', 'trajectory'");
  }
  if (value.contains("box")) return box_from_wire(value["box"]);
  if (value.contains("points")) {
    const auto& arr = value["points"];
    if (!arr.is_array()) invalid("'points' must be an array");
    PointSet set;
    for (const auto& p : arr) {
      const auto xy = point_from_wire(p);
      auto label = PointLabel::kPositive;
      if (p.size() >= 3) {
        const auto& l = p[2];
        const bool positive = l.is_boolean() ? l.get<bool>() : as_int(l, "label") != 0;
        label = positive ? PointLabel::kPositive : PointLabel::kNegative;
      }
      set.points.push_back({xy.x, xy.y, label});
    }
    return set;
  }
  if (value.contains("trajectory")) {
    const auto& arr = value["trajectory"];
    if (!arr.is_array()) invalid("'trajectory' must be an array");
    Trajectory traj;
    for (const auto& p : arr) traj.points.push_back(point_from_wire(p));
    return traj;
  }
  invalid("control must hold exactly one of 'points', 'box', 'trajectory'");
}

ojson to_wire(const LanguageControls& c) {
  ojson out;
  out["sentiment"] = std::string(to_string(c.sentiment));
  out["length"] = c.length ? ojson(*c.length) : ojson(nullptr);
  out["language"] = c.language;
  out["factuality"] = std::string(to_string(c.factuality));
  return out;
}

LanguageControls controls_from_wire(const ojson& value) {
  LanguageControls c;
  if (value.is_null()) return c;
  if (!value.is_object()) invalid("controls must be an object");
  if (const auto s = optional_string(value, "sentiment")) {
    const auto parsed = parse_sentiment(*s);
    if (!parsed) invalid("unknown sentiment '" + *s + "'");
    c.sentiment = *parsed;
  }
  if (const auto it = value.find("length"); it != value.end() && !it->is_null()) {
    c.length = as_int(*it, "length");
  }
  if (const auto l = optional_string(value, "language")) c.language = *l;
  if (const auto f = optional_string(value, "factuality")) {
    const auto parsed = parse_factuality(*f);
    if (!parsed) invalid("unknown factuality '" + *f + "'");
    c.factuality = *parsed;
  }
  try {
    validate(c);
  } catch (const Error& e) {
    invalid(e.what());
  }
  return c;
}

ojson to_wire(const CaptionResult& r, bool include_trace) {
  ojson out;
  out["mask"] = to_wire(r.mask);
  out["bbox"] = to_wire(r.bbox);
  out["raw_caption"] = r.raw_caption;
  out["category"] = r.category ? ojson(*r.category) : ojson(nullptr);
  out["refined_caption"] = r.refined_caption ? ojson(*r.refined_caption) : ojson(nullptr);
  out["fallback_used"] = r.fallback_used;
  if (include_trace) {
    out["trace"] = ojson::array();
    for (const auto& s : r.trace) {
      ojson step;
      step["step"] = std::string(to_string(s.name));
      step["backend"] = s.backend ? ojson(std::string(to_string(*s.backend))) : ojson(nullptr);
      step["input_digest"] = s.input_digest;
      step["output"] = s.output;
      step["duration_ms"] = s.duration_ms;
      out["trace"].push_back(std::move(step));
    }
  }
  return out;
}

CaptionResult caption_result_from_wire(const ojson& value) {
  CaptionResult r;
  r.mask = rle_from_wire(field(value, "mask"));
  r.bbox = box_from_wire(field(value, "bbox"));
  r.raw_caption = as_string(field(value, "raw_caption"), "raw_caption");
  r.category = optional_string(value, "category");
  r.refined_caption = optional_string(value, "refined_caption");
  const auto& fb = field(value, "fallback_used");
  if (!fb.is_boolean()) invalid("fallback_used must be a boolean");
  r.fallback_used = fb.get<bool>();
  if (const auto it = value.find("trace"); it != value.end()) {
    if (!it->is_array()) invalid("trace must be an array");
    for (const auto& s : *it) {
      TraceStep step;
      const auto name = parse_step_name(as_string(field(s, "step"), "step"));
      if (!name) invalid("unknown trace step");
      step.name = *name;
      if (const auto b = optional_string(s, "backend")) {
        step.backend = parse_backend_kind(*b);
        if (!step.backend) invalid("unknown backend kind '" + *b + "'");
      }
      step.input_digest = as_string(field(s, "input_digest"), "input_digest");
      step.output = as_string(field(s, "output"), "output");
      const auto& d = field(s, "duration_ms");
      if (!d.is_number()) invalid("duration_ms must be a number");
      step.duration_ms = d.get<double>();
      r.trace.push_back(std::move(step));
    }
  }
  return r;
}

ojson to_wire(const ParagraphResult& r) {
  ojson out;
  out["dense"] = ojson::array();
  for (const auto& d : r.dense) {
    ojson region;
    region["mask_id"] = d.mask_id;
    region["bbox"] = to_wire(d.bbox);
    region["area"] = d.area;
    region["caption"] = d.caption;
    out["dense"].push_back(std::move(region));
  }
  out["ocr"] = ojson::array();
  for (const auto& l : r.ocr) {
    ojson line;
    line["text"] = l.text;
    line["box"] = to_wire(l.box);
    line["conf"] = l.confidence;
    out["ocr"].push_back(std::move(line));
  }
  out["prompt"] = r.prompt.text;
  out["paragraph"] = r.paragraph;
  out["fallback_used"] = r.fallback_used;
  return out;
}

ParagraphResult paragraph_result_from_wire(const ojson& value) {
  ParagraphResult r;
  const auto& dense = field(value, "dense");
  if (!dense.is_array()) invalid("dense must be an array");
  for (const auto& d : dense) {
    DenseCaption region;
    region.mask_id = as_string(field(d, "mask_id"), "mask_id");
    region.bbox = box_from_wire(field(d, "bbox"));
    const auto& area = field(d, "area");
    if (!area.is_number_unsigned()) invalid("area must be a non-negative integer");
    region.area = area.get<std::size_t>();
    region.caption = as_string(field(d, "caption"), "caption");
    r.dense.push_back(std::move(region));
  }
  const auto& ocr = field(value, "ocr");
  if (!ocr.is_array()) invalid("ocr must be an array");
  for (const auto& l : ocr) {
    OcrLine line;
    line.text = as_string(field(l, "text"), "text");
    line.box = box_from_wire(field(l, "box"));
    const auto& conf = field(l, "conf");
    if (!conf.is_number()) invalid("conf must be a number");
    line.confidence = conf.get<double>();
    r.ocr.push_back(std::move(line));
  }
  r.prompt.text = as_string(field(value, "prompt"), "prompt");
  r.paragraph = as_string(field(value, "paragraph"), "paragraph");
  const auto& fb = field(value, "fallback_used");
  if (!fb.is_boolean()) invalid("fallback_used must be a boolean");
  r.fallback_used = fb.get<bool>();
  return r;
}

ParagraphOptions paragraph_options_from_wire(const ojson& value, ParagraphOptions opts) {
  if (value.is_null()) return opts;
  if (!value.is_object()) invalid("paragraph options must be an object");
  if (const auto it = value.find("max_regions"); it != value.end()) {
    const int n = as_int(*it, "max_regions");
    if (n < 1) invalid("max_regions must be >= 1");
    opts.max_regions = static_cast<std::size_t>(n);
  }
  if (const auto it = value.find("use_cot"); it != value.end()) {
    if (!it->is_boolean()) invalid("use_cot must be a boolean");
    opts.use_cot = it->get<bool>();
  }
  if (const auto it = value.find("min_confidence_ocr"); it != value.end()) {
    if (!it->is_number()) invalid("min_confidence_ocr must be a number");
    opts.min_confidence_ocr = it->get<double>();
  }
  return opts;
}

ojson to_wire(const ToolCall& call) {
  ojson out;
  out["tool"] = call.tool;
  out["input"] = call.input;
  out["output"] = call.output;
  return out;
}

ojson to_wire(const ChatMessage& message) {
  ojson out;
  out["role"] = std::string(to_string(message.role));
  out["text"] = message.text;
  return out;
}

ChatMessage chat_message_from_wire(const ojson& value) {
  const auto role = parse_chat_role(as_string(field(value, "role"), "role"));
  if (!role) invalid("unknown chat role");
  auto text = as_string(field(value, "text"), "text");
  if (text.empty()) invalid("chat message text is empty");
  return {*role, std::move(text)};
}

CaptionResult without_durations(CaptionResult result) {
  for (auto& s : result.trace) s.duration_ms = 0.0;
  return result;
}

}  // namespace capengine

// SPDX-License-Identifier: Apache-2.0
//
// JSON wire protocol of the remote model services. Every request is a POST;
// responses are validated before anything reaches the pipeline.
#include <nlohmann/json.hpp>

#include "capengine/backends.hpp"
#include "capengine/error.hpp"
#include "capengine/image_codec.hpp"
#include "capengine/text.hpp"

namespace capengine {

namespace {

using ojson = nlohmann::ordered_json;
using nlohmann::json;

std::string image_b64(const RgbImage& image) { return base64_encode(encode_png(image)); }

[[noreturn]] void malformed(std::string_view kind, const std::string& what) {
  throw Error(ErrorCode::kMalformedResponse, std::string(kind) + ": " + what);
}

json parse_body(std::string_view kind, const std::string& body) {
  auto doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) malformed(kind, "response is not a JSON object");
  return doc;
}

std::string require_string(std::string_view kind, const json& doc, const char* field) {
  const auto it = doc.find(field);
  if (it == doc.end() || !it->is_string()) malformed(kind, std::string("missing string field '") + field + "'");
  return it->get<std::string>();
}

RleMask parse_rle(std::string_view kind, const json& obj, const ImageDims& expected) {
  RleMask rle;
  try {
    rle = rle_from_text(obj.dump());
  } catch (const Error& e) {
    malformed(kind, e.what());
  }
  if (rle.dims != expected) malformed(kind, "mask dimensions differ from the image");
  return rle;
}

BoxRegion parse_box(std::string_view kind, const json& arr) {
  if (!arr.is_array() || arr.size() != 4 ||
      !std::all_of(arr.begin(), arr.end(), [](const json& v) { return v.is_number_integer(); })) {
    malformed(kind, "box must be [x0,y0,x1,y1]");
  }
  return {arr[0].get<int>(), arr[1].get<int>(), arr[2].get<int>(), arr[3].get<int>()};
}

}  // namespace

RemoteClient::RemoteClient(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks)
    : config_(std::move(config)), transport_(std::move(transport)), hooks_(std::move(hooks)) {
  validate(config_);
}

std::string RemoteClient::call(const std::string& path, const std::string& body) {
  return call_with_retry(config_, *transport_, path, body, hooks_).response.body;
}

RemoteSegmenter::RemoteSegmenter(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks)
    : RemoteClient(std::move(config), std::move(transport), std::move(hooks)) {}

std::vector<SegmentationCandidate> RemoteSegmenter::segment(const RgbImage& image, const SegPrompt& prompt) {
  ojson req;
  req["image_b64"] = image_b64(image);
  req["points"] = ojson::array();
  for (const auto& p : prompt.points) {
    req["points"].push_back({p.x, p.y, p.label == PointLabel::kPositive ? 1 : 0});
  }
  req["box"] = prompt.box ? ojson::array({prompt.box->x0, prompt.box->y0, prompt.box->x1, prompt.box->y1})
                          : ojson(nullptr);
  req["multimask"] = true;

  const auto doc = parse_body("segmenter", call("/segment", req.dump()));
  const auto it = doc.find("candidates");
  if (it == doc.end() || !it->is_array()) malformed("segmenter", "missing 'candidates' array");
  if (it->empty()) throw Error(ErrorCode::kNoMask, "segmenter returned no candidates");

  std::vector<SegmentationCandidate> out;
  for (const auto& c : *it) {
    if (!c.is_object() || !c.contains("rle") || !c.contains("score") || !c["score"].is_number()) {
      malformed("segmenter", "candidate needs 'rle' and numeric 'score'");
    }
    const double score = c["score"].get<double>();
    if (score < 0.0 || score > 1.0) malformed("segmenter", "score outside [0,1]");
    out.push_back({parse_rle("segmenter", c["rle"], image.dims()), score});
  }
  return out;
}

std::vector<BitMask> RemoteSegmenter::segment_everything(const RgbImage& image) {
  ojson req;
  req["image_b64"] = image_b64(image);
  const auto doc = parse_body("segmenter", call("/segment_all", req.dump()));
  const auto it = doc.find("masks");
  if (it == doc.end() || !it->is_array()) malformed("segmenter", "missing 'masks' array");
  std::vector<BitMask> out;
  for (const auto& m : *it) {
    if (!m.is_object() || !m.contains("rle")) malformed("segmenter", "mask entry needs 'rle'");
    out.push_back(rle_decode(parse_rle("segmenter", m["rle"], image.dims())));
  }
  return out;
}

RemoteCaptioner::RemoteCaptioner(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks)
    : RemoteClient(std::move(config), std::move(transport), std::move(hooks)) {}

std::string RemoteCaptioner::caption(const RgbImage& region, std::string_view prefix) {
  ojson req;
  req["image_b64"] = image_b64(region);
  req["prefix"] = std::string(prefix);
  const auto text = require_string("captioner", parse_body("captioner", call("/caption", req.dump())), "text");
  const auto trimmed = trim(text);
  if (trimmed.empty()) throw Error(ErrorCode::kEmptyCaption, "captioner returned empty text");
  return std::string(trimmed);
}

RemoteRefiner::RemoteRefiner(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks)
    : RemoteClient(std::move(config), std::move(transport), std::move(hooks)) {}

std::string RemoteRefiner::refine(const PromptText& prompt) {
  ojson req;
  req["prompt"] = prompt.text;
  const auto text = require_string("refiner", parse_body("refiner", call("/refine", req.dump())), "text");
  const auto trimmed = trim(text);
  if (trimmed.empty()) malformed("refiner", "empty text");
  if (is_refusal(trimmed, config_.refusal_markers)) throw Error(ErrorCode::kRefusal, std::string(trimmed));
  return std::string(trimmed);
}

RemoteVqa::RemoteVqa(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks)
    : RemoteClient(std::move(config), std::move(transport), std::move(hooks)) {}

std::string RemoteVqa::answer(const RgbImage& region, std::string_view question) {
  if (trim(question).empty()) throw Error(ErrorCode::kInvalidArgument, "empty VQA question");
  ojson req;
  req["image_b64"] = image_b64(region);
  req["question"] = std::string(question);
  const auto text = require_string("vqa", parse_body("vqa", call("/vqa", req.dump())), "answer");
  const auto trimmed = trim(text);
  if (trimmed.empty()) malformed("vqa", "empty answer");
  return std::string(trimmed);
}

RemoteOcr::RemoteOcr(BackendConfig config, std::shared_ptr<Transport> transport, RetryHooks hooks)
    : RemoteClient(std::move(config), std::move(transport), std::move(hooks)) {}

std::vector<OcrLine> RemoteOcr::read(const RgbImage& image) {
  ojson req;
  req["image_b64"] = image_b64(image);
  const auto doc = parse_body("ocr", call("/ocr", req.dump()));
  const auto it = doc.find("lines");
  if (it == doc.end() || !it->is_array()) malformed("ocr", "missing 'lines' array");
  std::vector<OcrLine> out;
  for (const auto& l : *it) {
    if (!l.is_object() || !l.contains("box") || !l.contains("conf") || !l["conf"].is_number()) {
      malformed("ocr", "line needs 'text', 'box' and numeric 'conf'");
    }
    OcrLine line;
    line.text = require_string("ocr", l, "text");
    line.box = parse_box("ocr", l["box"]);
    line.confidence = l["conf"].get<double>();
    if (line.text.empty()) malformed("ocr", "empty line text");
    if (line.confidence < 0.0 || line.confidence > 1.0) malformed("ocr", "confidence outside [0,1]");
    out.push_back(std::move(line));
  }
  return out;
}

}  // namespace capengine

// SPDX-License-Identifier: Apache-2.0
#include "capengine/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "capengine/error.hpp"

namespace capengine {

namespace {

int clamp_to(int v, int extent) { return std::clamp(v, 0, extent - 1); }

BoxRegion ordered_clamped(const BoxRegion& box, const ImageDims& dims) {
  return BoxRegion{
      clamp_to(std::min(box.x0, box.x1), dims.width),
      clamp_to(std::min(box.y0, box.y1), dims.height),
      clamp_to(std::max(box.x0, box.x1), dims.width),
      clamp_to(std::max(box.y0, box.y1), dims.height),
  };
}

void require_same_dims(const ImageDims& a, const ImageDims& b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::kDimsMismatch,
                std::string(what) + ": " + std::to_string(a.width) + "x" +
                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                    std::to_string(b.height));
  }
}

}  // namespace

void validate_dims(const ImageDims& dims) {
  if (dims.width < 1 || dims.height < 1) {
    throw Error(ErrorCode::kInvalidArgument, "image dimensions must be positive");
  }
}

int round_half_away(double value) { return static_cast<int>(std::round(value)); }

std::vector<PixelPoint> resample_trajectory(const Trajectory& trajectory, int samples) {
  const auto& pts = trajectory.points;
  if (pts.empty() || samples < 1) {
    throw Error(ErrorCode::kInvalidArgument, "trajectory must be non-empty and K >= 1");
  }

  std::vector<double> cumulative(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    cumulative[i] = cumulative[i - 1] + std::hypot(static_cast<double>(pts[i].x - pts[i - 1].x),
                                                   static_cast<double>(pts[i].y - pts[i - 1].y));
  }
  const double total = cumulative.back();
  // A stroke with no extent is a click.
  if (pts.size() == 1 || total == 0.0 || samples == 1) return {pts.front()};

  std::vector<PixelPoint> out;
  out.reserve(static_cast<std::size_t>(samples));
  std::size_t seg = 0;
  for (int i = 0; i < samples; ++i) {
    if (i == samples - 1) {
      out.push_back(pts.back());
      break;
    }
    const double s = total * static_cast<double>(i) / static_cast<double>(samples - 1);
    while (seg + 1 < pts.size() - 1 && cumulative[seg + 1] < s) ++seg;
    const double span = cumulative[seg + 1] - cumulative[seg];
    const double t = span > 0.0 ? (s - cumulative[seg]) / span : 0.0;
    const auto& a = pts[seg];
    const auto& b = pts[seg + 1];
    out.push_back(PixelPoint{round_half_away(a.x + t * (b.x - a.x)),
                             round_half_away(a.y + t * (b.y - a.y))});
  }
  return out;
}

SegPrompt normalize_control(const VisualControl& control, const ImageDims& dims,
                            const NormalizeOptions& options) {
  validate_dims(dims);
  SegPrompt prompt;

  if (const auto* set = std::get_if<PointSet>(&control)) {
    const bool any_positive = std::any_of(set->points.begin(), set->points.end(), [](const auto& p) {
      return p.label == PointLabel::kPositive;
    });
    if (!any_positive) throw Error(ErrorCode::kEmptyControl, "point control needs a positive point");
    for (const auto& p : set->points) {
      prompt.points.push_back({clamp_to(p.x, dims.width), clamp_to(p.y, dims.height), p.label});
    }
  } else if (const auto* box = std::get_if<BoxRegion>(&control)) {
    prompt.box = ordered_clamped(*box, dims);
  } else {
    const auto& traj = std::get<Trajectory>(control);
    if (traj.points.empty()) throw Error(ErrorCode::kEmptyControl, "trajectory has no points");

    Trajectory clamped;
    clamped.points.reserve(traj.points.size());
    for (const auto& p : traj.points) {
      clamped.points.push_back({clamp_to(p.x, dims.width), clamp_to(p.y, dims.height)});
    }
    const auto samples = resample_trajectory(clamped, std::max(1, options.trajectory_samples));
    for (const auto& p : samples) prompt.points.push_back({p.x, p.y, PointLabel::kPositive});

    const auto [min_x, max_x] = std::minmax_element(
        clamped.points.begin(), clamped.points.end(), [](auto& a, auto& b) { return a.x < b.x; });
    const auto [min_y, max_y] = std::minmax_element(
        clamped.points.begin(), clamped.points.end(), [](auto& a, auto& b) { return a.y < b.y; });
    const BoxRegion hull{min_x->x, min_y->y, max_x->x, max_y->y};
    const bool is_click = hull.x0 == hull.x1 && hull.y0 == hull.y1;
    if (options.forward_hull_box && !is_click) prompt.box = hull;
  }
  return prompt;
}

BitMask::BitMask(const ImageDims& dims, bool fill)
    : dims_(dims), bits_(dims.pixel_count(), fill ? 1 : 0) {
  validate_dims(dims);
}

BitMask::BitMask(const ImageDims& dims, std::vector<std::uint8_t> bits)
    : dims_(dims), bits_(std::move(bits)) {
  validate_dims(dims);
  if (bits_.size() != dims.pixel_count()) {
    throw Error(ErrorCode::kDimsMismatch, "mask bit count does not match dimensions");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

BitMask BitMask::from_box(const ImageDims& dims, const BoxRegion& box) {
  BitMask mask(dims);
  const auto b = ordered_clamped(box, dims);
  for (int y = b.y0; y <= b.y1; ++y) {
    for (int x = b.x0; x <= b.x1; ++x) mask.set(x, y);
  }
  return mask;
}

void validate_rle(const RleMask& rle) {
  if (rle.dims.width < 1 || rle.dims.height < 1) {
    throw Error(ErrorCode::kInvalidRle, "dimensions must be positive");
  }
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < rle.counts.size(); ++i) {
    if (i > 0 && rle.counts[i] == 0) {
      throw Error(ErrorCode::kInvalidRle, "zero-length run at index " + std::to_string(i));
    }
    sum += rle.counts[i];
  }
  if (sum != rle.dims.pixel_count()) {
    throw Error(ErrorCode::kInvalidRle, "run lengths sum to " + std::to_string(sum) +
                                            ", expected " +
                                            std::to_string(rle.dims.pixel_count()));
  }
}

RleMask rle_encode(const BitMask& mask) {
  RleMask rle{mask.dims(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (const auto bit : mask.bits()) {
    if (bit != current) {
      rle.counts.push_back(run);
      current = bit;
      run = 0;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

BitMask rle_decode(const RleMask& rle) {
  validate_rle(rle);
  std::vector<std::uint8_t> bits;
  bits.reserve(rle.dims.pixel_count());
  std::uint8_t value = 0;
  for (const auto count : rle.counts) {
    bits.insert(bits.end(), count, value);
    value ^= 1;
  }
  return BitMask(rle.dims, std::move(bits));
}

std::string rle_to_text(const RleMask& rle) {
  std::string out = "{\"w\":" + std::to_string(rle.dims.width) +
                    ",\"h\":" + std::to_string(rle.dims.height) + ",\"counts\":[";
  for (std::size_t i = 0; i < rle.counts.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(rle.counts[i]);
  }
  out += "]}";
  return out;
}

RleMask rle_from_text(std::string_view text) {
  const auto doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(ErrorCode::kInvalidRle, "not a JSON object");
  }
  const auto w = doc.find("w");
  const auto h = doc.find("h");
  const auto counts = doc.find("counts");
  if (w == doc.end() || h == doc.end() || counts == doc.end() || !w->is_number_integer() ||
      !h->is_number_integer() || !counts->is_array()) {
    throw Error(ErrorCode::kInvalidRle, "expected {\"w\",\"h\",\"counts\"}");
  }
  RleMask rle;
  rle.dims = {w->get<int>(), h->get<int>()};
  for (const auto& c : *counts) {
    if (!c.is_number_unsigned()) throw Error(ErrorCode::kInvalidRle, "counts must be non-negative");
    rle.counts.push_back(c.get<std::uint32_t>());
  }
  validate_rle(rle);
  return rle;
}

BoxRegion mask_bbox(const BitMask& mask) {
  const auto& d = mask.dims();
  BoxRegion box{d.width, d.height, -1, -1};
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!mask.get(x, y)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  if (box.x1 < 0) throw Error(ErrorCode::kEmptyMask, "mask has no set pixels");
  return box;
}

std::size_t mask_area(const BitMask& mask) {
  const auto bits = mask.bits();
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double mask_iou(const BitMask& a, const BitMask& b) {
  require_same_dims(a.dims(), b.dims(), "mask_iou");
  const auto ab = a.bits();
  const auto bb = b.bits();
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += ab[i] & bb[i];
    uni += ab[i] | bb[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BoxRegion crop_window(const BoxRegion& box, double margin_ratio, const ImageDims& dims) {
  // Margins are proportional to the coordinate extent (x1 - x0) per axis.
  const int mx = round_half_away(margin_ratio * (box.x1 - box.x0));
  const int my = round_half_away(margin_ratio * (box.y1 - box.y0));
  return BoxRegion{
      std::max(0, box.x0 - mx),
      std::max(0, box.y0 - my),
      std::min(dims.width - 1, box.x1 + mx),
      std::min(dims.height - 1, box.y1 + my),
  };
}

RgbImage::RgbImage(const ImageDims& dims, std::uint8_t fill)
    : dims_(dims), pixels_(dims.pixel_count() * 3, fill) {
  validate_dims(dims);
}

RgbImage::RgbImage(const ImageDims& dims, std::vector<std::uint8_t> pixels)
    : dims_(dims), pixels_(std::move(pixels)) {
  validate_dims(dims);
  if (pixels_.size() != dims.pixel_count() * 3) {
    throw Error(ErrorCode::kDimsMismatch, "pixel buffer does not match dimensions");
  }
}

RgbImage crop_image(const RgbImage& image, const BoxRegion& window) {
  const auto& d = image.dims();
  if (window.x0 > window.x1 || window.y0 > window.y1 || !d.contains(window.x0, window.y0) ||
      !d.contains(window.x1, window.y1)) {
    throw Error(ErrorCode::kOutOfBounds, "crop window outside image");
  }
  RgbImage out(ImageDims{window.width(), window.height()});
  const auto row_bytes = static_cast<std::size_t>(window.width()) * 3;
  for (int y = window.y0; y <= window.y1; ++y) {
    std::copy_n(image.at(window.x0, y), row_bytes, out.at(0, y - window.y0));
  }
  return out;
}

RgbImage whiten_background(const RgbImage& image, const BitMask& mask) {
  require_same_dims(image.dims(), mask.dims(), "whiten_background");
  RgbImage out = image;
  auto px = out.pixels();
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!bits[i]) std::fill_n(px.begin() + static_cast<std::ptrdiff_t>(i * 3), 3, 255);
  }
  return out;
}

std::vector<BitMask> filter_masks(const std::vector<BitMask>& candidates,
                                  const MaskFilterOptions& options) {
  if (candidates.empty()) return {};
  const auto& dims = candidates.front().dims();
  std::vector<std::size_t> areas;
  areas.reserve(candidates.size());
  for (const auto& m : candidates) {
    require_same_dims(dims, m.dims(), "filter_masks");
    areas.push_back(mask_area(m));
  }

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return areas[a] > areas[b]; });

  const double floor = options.min_area_ratio * static_cast<double>(dims.pixel_count());
  std::vector<BitMask> kept;
  for (const auto idx : order) {
    if (static_cast<double>(areas[idx]) < floor) continue;
    const bool duplicate = std::any_of(kept.begin(), kept.end(), [&](const BitMask& k) {
      return mask_iou(k, candidates[idx]) >= options.iou_threshold;
    });
    if (!duplicate) kept.push_back(candidates[idx]);
  }
  return kept;
}

}  // namespace capengine

// SPDX-License-Identifier: Apache-2.0
//
// Visual controls, segmenter prompts, binary masks and the raster operations
// the captioning pipeline performs on them. Everything here is a pure
// function over value types.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace capengine {

struct ImageDims {
  int width = 0;
  int height = 0;

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

/// Throws InvalidArgument unless both sides are at least one pixel.
void validate_dims(const ImageDims& dims);

struct PixelPoint {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

enum class PointLabel { kNegative = 0, kPositive = 1 };

struct LabeledPoint {
  int x = 0;
  int y = 0;
  PointLabel label = PointLabel::kPositive;
  friend bool operator==(const LabeledPoint&, const LabeledPoint&) = default;
};

/// Inclusive pixel rectangle.
struct BoxRegion {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  friend bool operator==(const BoxRegion&, const BoxRegion&) = default;
};

struct PointSet {
  std::vector<LabeledPoint> points;
  friend bool operator==(const PointSet&, const PointSet&) = default;
};

struct Trajectory {
  std::vector<PixelPoint> points;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

using VisualControl = std::variant<PointSet, BoxRegion, Trajectory>;

/// Prompt in the form the segmenter accepts: labeled points and/or a box.
struct SegPrompt {
  std::vector<LabeledPoint> points;
  std::optional<BoxRegion> box;
  friend bool operator==(const SegPrompt&, const SegPrompt&) = default;
};

struct NormalizeOptions {
  int trajectory_samples = 8;
  bool forward_hull_box = true;
};

SegPrompt normalize_control(const VisualControl& control, const ImageDims& dims,
                            const NormalizeOptions& options = {});

std::vector<PixelPoint> resample_trajectory(const Trajectory& trajectory, int samples);

/// Rounds half away from zero.
int round_half_away(double value);

/// Dense row-major binary mask, one byte per pixel (0 or 1).
class BitMask {
 public:
  BitMask() = default;
  explicit BitMask(const ImageDims& dims, bool fill = false);
  BitMask(const ImageDims& dims, std::vector<std::uint8_t> bits);

  static BitMask from_box(const ImageDims& dims, const BoxRegion& box);

  const ImageDims& dims() const { return dims_; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  bool get(int x, int y) const {
    return bits_[static_cast<std::size_t>(y) * dims_.width + x] != 0;
  }
  void set(int x, int y, bool on = true) {
    bits_[static_cast<std::size_t>(y) * dims_.width + x] = on ? 1 : 0;
  }

  friend bool operator==(const BitMask&, const BitMask&) = default;

 private:
  ImageDims dims_;
  std::vector<std::uint8_t> bits_;
};

/// Run-length form: alternating zero/one runs in row-major order, starting
/// with the (possibly empty) leading zero run.
struct RleMask {
  ImageDims dims;
  std::vector<std::uint32_t> counts;
  friend bool operator==(const RleMask&, const RleMask&) = default;
};

/// Throws InvalidRle if the counts do not describe exactly width*height
/// pixels or contain an interior zero run.
void validate_rle(const RleMask& rle);

RleMask rle_encode(const BitMask& mask);
BitMask rle_decode(const RleMask& rle);

/// `{"w":W,"h":H,"counts":[c0,c1,...]}`, no whitespace.
std::string rle_to_text(const RleMask& rle);
/// Parses and validates the textual form.
RleMask rle_from_text(std::string_view text);

BoxRegion mask_bbox(const BitMask& mask);
std::size_t mask_area(const BitMask& mask);
double mask_iou(const BitMask& a, const BitMask& b);

inline constexpr double kDefaultMarginRatio = 0.15;

BoxRegion crop_window(const BoxRegion& box, double margin_ratio, const ImageDims& dims);

/// Interleaved 8-bit RGB raster.
class RgbImage {
 public:
  RgbImage() = default;
  explicit RgbImage(const ImageDims& dims, std::uint8_t fill = 0);
  RgbImage(const ImageDims& dims, std::vector<std::uint8_t> pixels);

  const ImageDims& dims() const { return dims_; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> pixels() { return pixels_; }

  const std::uint8_t* at(int x, int y) const {
    return pixels_.data() + (static_cast<std::size_t>(y) * dims_.width + x) * 3;
  }
  std::uint8_t* at(int x, int y) {
    return pixels_.data() + (static_cast<std::size_t>(y) * dims_.width + x) * 3;
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  ImageDims dims_;
  std::vector<std::uint8_t> pixels_;
};

RgbImage crop_image(const RgbImage& image, const BoxRegion& window);
RgbImage whiten_background(const RgbImage& image, const BitMask& mask);

struct MaskFilterOptions {
  double min_area_ratio = 0.0005;
  double iou_threshold = 0.9;
};

std::vector<BitMask> filter_masks(const std::vector<BitMask>& candidates,
                                  const MaskFilterOptions& options = {});

}  // namespace capengine

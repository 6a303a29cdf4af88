// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "capengine/geometry.hpp"

namespace capengine {

enum class ImageFormat { kPng, kJpeg };

std::string_view extension(ImageFormat format);

/// Sniffs the magic bytes; nullopt for anything but PNG/JPEG.
std::optional<ImageFormat> detect_format(std::span<const std::uint8_t> bytes);

struct DecodedImage {
  ImageFormat format;
  RgbImage image;
};

/// Throws Undecodable for unknown formats and truncated or corrupt data.
DecodedImage decode_image(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const RgbImage& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
DecodedImage load_image(const std::filesystem::path& path);

/// SHA-256 over `width` and `height` (little-endian u32) followed by the
/// interleaved RGB bytes. Backends use it to identify a region's content.
std::string raster_digest(const RgbImage& image);

}  // namespace capengine

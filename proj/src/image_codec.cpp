// SPDX-License-Identifier: Apache-2.0
#include "capengine/image_codec.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>
#include <png.h>

#include "capengine/error.hpp"
#include "capengine/text.hpp"

namespace capengine {

namespace {

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::kUndecodable, std::string("png: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  const ImageDims dims{static_cast<int>(img.width), static_cast<int>(img.height)};
  if (dims.width < 1 || dims.height < 1) {
    png_image_free(&img);
    throw Error(ErrorCode::kUndecodable, "png: empty image");
  }
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorCode::kUndecodable, "png: " + msg);
  }
  return RgbImage(dims, std::move(pixels));
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// libjpeg treats premature end of data as a warning and pads with grey;
// promote it so truncated uploads are rejected.
void jpeg_emit_message(j_common_ptr cinfo, int level) {
  if (level < 0) jpeg_error_exit(cinfo);
}

RgbImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_emit_message;
  std::vector<std::uint8_t> pixels;

  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::kUndecodable, std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const ImageDims dims{static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height)};
  const std::size_t stride = static_cast<std::size_t>(dims.width) * 3;
  pixels.resize(stride * static_cast<std::size_t>(dims.height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + stride * cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return RgbImage(dims, std::move(pixels));
}

}  // namespace

std::string_view extension(ImageFormat format) {
  return format == ImageFormat::kPng ? "png" : "jpg";
}

std::optional<ImageFormat> detect_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngMagic[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= sizeof(kPngMagic) && std::memcmp(bytes.data(), kPngMagic, sizeof(kPngMagic)) == 0) {
    return ImageFormat::kPng;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return ImageFormat::kJpeg;
  }
  return std::nullopt;
}

DecodedImage decode_image(std::span<const std::uint8_t> bytes) {
  const auto format = detect_format(bytes);
  if (!format) throw Error(ErrorCode::kUndecodable, "not a PNG or JPEG image");
  if (*format == ImageFormat::kPng) return {*format, decode_png(bytes)};
  return {*format, decode_jpeg(bytes)};
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dims().width);
  img.height = static_cast<png_uint_32>(image.dims().height);
  img.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels().data(), 0, nullptr)) {
    throw Error(ErrorCode::kInvalidArgument, std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels().data(), 0, nullptr)) {
    throw Error(ErrorCode::kInvalidArgument, std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DecodedImage load_image(const std::filesystem::path& path) {
  return decode_image(read_file_bytes(path));
}

std::string raster_digest(const RgbImage& image) {
  std::vector<std::uint8_t> buf;
  buf.reserve(8 + image.pixels().size());
  for (const auto v : {image.dims().width, image.dims().height}) {
    const auto u = static_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  buf.insert(buf.end(), image.pixels().begin(), image.pixels().end());
  return sha256_hex(buf);
}

}  // namespace capengine

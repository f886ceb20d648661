#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

// jpeglib.h needs FILE and size_t declared before it.
#include <jpeglib.h>

#include "exprnet/error.hpp"
#include "exprnet/text.hpp"

namespace exprnet {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

namespace detail {

inline Image decode_png(const std::string& bytes, const std::string& origin) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DataError("cannot decode PNG '" + origin + "': " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image out{img.width, img.height, gray ? 1u : 3u, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  // Alpha, if present, is composited onto black.
  png_color black{0, 0, 0};
  if (!png_image_finish_read(&img, &black, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + origin + "': " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline void jpeg_silent(j_common_ptr, int) {}

// Keeps the setjmp frame free of objects with non-trivial destructors.
inline bool decode_jpeg_raw(const std::string& bytes, Image& out, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silent;
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.channels = static_cast<std::size_t>(cinfo.output_components);
  out.pixels.resize(out.width * out.height * out.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

inline Image decode_jpeg(const std::string& bytes, const std::string& origin) {
  Image out;
  char message[JMSG_LENGTH_MAX] = {};
  if (!decode_jpeg_raw(bytes, out, message)) {
    throw DataError("cannot decode JPEG '" + origin + "': " + message);
  }
  return out;
}

inline std::uint32_t le32(const std::string& b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

inline std::uint16_t le16(const std::string& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) | static_cast<unsigned char>(b[at + 1]) << 8);
}

// Uncompressed 8-bit (paletted), 24-bit and 32-bit BMP.
inline Image decode_bmp(const std::string& b, const std::string& origin) {
  auto fail = [&](const std::string& why) { return DataError("cannot decode BMP '" + origin + "': " + why); };
  if (b.size() < 54) throw fail("truncated header");
  const std::uint32_t data_offset = le32(b, 10);
  const std::uint32_t header_size = le32(b, 14);
  const auto width = static_cast<std::int32_t>(le32(b, 18));
  const auto raw_height = static_cast<std::int32_t>(le32(b, 22));
  const std::uint16_t bpp = le16(b, 28);
  const std::uint32_t compression = le32(b, 30);
  if (width <= 0 || raw_height == 0) throw fail("bad dimensions");
  if (compression != 0 && !(compression == 3 && bpp == 32)) throw fail("compressed BMP is not supported");
  if (bpp != 8 && bpp != 24 && bpp != 32) throw fail("unsupported bit depth " + std::to_string(bpp));
  const bool bottom_up = raw_height > 0;
  const std::size_t w = static_cast<std::size_t>(width);
  const std::size_t h = static_cast<std::size_t>(bottom_up ? raw_height : -raw_height);
  const std::size_t stride = ((w * bpp + 31) / 32) * 4;
  if (data_offset + stride * h > b.size()) throw fail("truncated pixel data");

  std::vector<std::array<std::uint8_t, 3>> palette;
  if (bpp == 8) {
    const std::size_t pal_at = 14 + header_size;
    std::uint32_t entries = le32(b, 46);
    if (entries == 0) entries = 256;
    if (pal_at + entries * 4 > data_offset) throw fail("truncated palette");
    for (std::uint32_t i = 0; i < entries; ++i) {
      const auto* p = reinterpret_cast<const unsigned char*>(b.data() + pal_at + i * 4);
      palette.push_back({p[2], p[1], p[0]});
    }
  }

  Image out{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t src_row = bottom_up ? h - 1 - y : y;
    const auto* row = reinterpret_cast<const unsigned char*>(b.data() + data_offset + src_row * stride);
    for (std::size_t x = 0; x < w; ++x) {
      std::uint8_t* dst = out.pixels.data() + (y * w + x) * 3;
      if (bpp == 8) {
        if (row[x] >= palette.size()) throw fail("palette index out of range");
        const auto& c = palette[row[x]];
        dst[0] = c[0];
        dst[1] = c[1];
        dst[2] = c[2];
      } else {
        const std::size_t step = bpp / 8;
        dst[0] = row[x * step + 2];
        dst[1] = row[x * step + 1];
        dst[2] = row[x * step + 0];
      }
    }
  }
  return out;
}

}  // namespace detail

/// Decodes an 8-bit PNG, JPEG or BMP file, detected by content.
inline Image decode_image(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_text_file(path);
  } catch (const IoError&) {
    throw DataError("cannot read image '" + path.string() + "'");
  }
  const std::string origin = path.string();
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), "\x89PNG", 4) == 0) return detail::decode_png(bytes, origin);
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF && static_cast<unsigned char>(bytes[1]) == 0xD8) {
    return detail::decode_jpeg(bytes, origin);
  }
  if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return detail::decode_bmp(bytes, origin);
  throw DataError("cannot decode '" + origin + "': not a PNG, JPEG or BMP file");
}

inline void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw ValueError("write_png: 1 or 3 channels required");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

inline void write_bmp(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 3) throw ValueError("write_bmp: 3 channels required");
  const std::size_t stride = ((image.width * 24 + 31) / 32) * 4;
  std::string b(54 + stride * image.height, '\0');
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[at + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  };
  b[0] = 'B';
  b[1] = 'M';
  put32(2, static_cast<std::uint32_t>(b.size()));
  put32(10, 54);
  put32(14, 40);
  put32(18, static_cast<std::uint32_t>(image.width));
  put32(22, static_cast<std::uint32_t>(image.height));
  b[26] = 1;
  b[28] = 24;
  for (std::size_t y = 0; y < image.height; ++y) {
    const std::size_t row = 54 + (image.height - 1 - y) * stride;
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) b[row + x * 3 + c] = static_cast<char>(image.at(y, x, 2 - c));
    }
  }
  write_text_file(path, b);
}

namespace detail {
inline bool encode_jpeg_raw(const Image& image, int quality, unsigned char** buffer, unsigned long* size, char* message) {
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_compress(&cinfo);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, buffer, size);
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = static_cast<int>(image.channels);
  cinfo.in_color_space = image.channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(image.pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * image.width * image.channels);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}
}  // namespace detail

inline void write_jpeg(const Image& image, const std::filesystem::path& path, int quality = 95) {
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  char message[JMSG_LENGTH_MAX] = {};
  const bool ok = detail::encode_jpeg_raw(image, quality, &buffer, &size, message);
  std::unique_ptr<unsigned char, decltype(&std::free)> owned(buffer, &std::free);
  if (!ok) throw IoError("cannot encode JPEG '" + path.string() + "': " + message);
  write_text_file(path, std::string_view(reinterpret_cast<const char*>(buffer), size));
}

}  // namespace exprnet

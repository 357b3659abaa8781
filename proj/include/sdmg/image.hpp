#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "sdmg/errors.hpp"

namespace sdmg {

/// Planar C×H×W raster with intensities in [0,1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f) : channels(c), height(h), width(w), data(c * h * w, fill) {}

  bool empty() const { return data.empty(); }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

/// Bilinear resampling with pixel-centre alignment.
inline Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
  if (src.empty()) return {};
  Image dst(src.channels, out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h, sx = static_cast<double>(src.width) / out_w;
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
        const double bot = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
        dst.at(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return dst;
}

inline Image crop(const Image& src, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  if (src.empty()) return {};
  Image dst(src.channels, y1 - y0, x1 - x0);
  for (std::size_t c = 0; c < src.channels; ++c)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) dst.at(c, y - y0, x - x0) = src.at(c, y, x);
  return dst;
}

/// Converts between grayscale and RGB; other channel counts are rejected.
inline Image convert_channels(const Image& src, std::size_t channels) {
  if (src.channels == channels || src.empty()) return src;
  Image dst(channels, src.height, src.width);
  const std::size_t plane = src.height * src.width;
  if (src.channels == 3 && channels == 1) {
    for (std::size_t i = 0; i < plane; ++i)
      dst.data[i] = (src.data[i] + src.data[plane + i] + src.data[2 * plane + i]) / 3.0f;
  } else if (src.channels == 1 && channels == 3) {
    for (std::size_t c = 0; c < 3; ++c) std::copy_n(src.data.begin(), plane, dst.data.begin() + c * plane);
  } else {
    throw ValidationError("cannot convert " + std::to_string(src.channels) + "-channel image to " + std::to_string(channels));
  }
  return dst;
}

namespace detail {

inline Image from_interleaved(const std::vector<unsigned char>& buf, std::size_t c, std::size_t h, std::size_t w) {
  Image img(c, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) img.at(k, y, x) = buf[(y * w + x) * c + k] / 255.0f;
  return img;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

inline Image read_jpeg(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = [](j_common_ptr info) { std::longjmp(reinterpret_cast<JpegErrorManager*>(info->err)->jump, 1); };
  std::vector<unsigned char> buf;
  std::size_t h = 0, w = 0, c = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw IoError("corrupt JPEG " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  c = static_cast<std::size_t>(cinfo.output_components);
  buf.resize(h * w * c);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * c;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return from_interleaved(buf, c, h, w);
}

inline Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw IoError("cannot read PNG " + path + ": " + img.message);
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("corrupt PNG " + path + ": " + img.message);
  }
  return from_interleaved(buf, gray ? 1 : 3, img.height, img.width);
}

}  // namespace detail

/// Reads PNG or JPEG, picked by file signature.
inline Image read_image(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open image " + path.string());
  unsigned char sig[8] = {};
  const std::size_t got = std::fread(sig, 1, sizeof(sig), f);
  std::fclose(f);
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return detail::read_png(path.string());
  if (got >= 2 && sig[0] == 0xFF && sig[1] == 0xD8) return detail::read_jpeg(path.string());
  throw IoError("unsupported image format: " + path.string());
}

/// Writes an 8-bit grayscale or RGB PNG.
inline void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ValidationError("write_png: need 1 or 3 channels");
  std::vector<unsigned char> buf(image.height * image.width * image.channels);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buf[(y * image.width + x) * image.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

}  // namespace sdmg

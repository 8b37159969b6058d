#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <png.h>

#include "cdm/colorspace.hpp"
#include "cdm/errors.hpp"

namespace cdm {

// H x W x C raster, interleaved floats. C=3 for sRGB images, C=12 for
// transformed feature maps.
struct ImageBuf {
  int height = 0, width = 0, channels = 0;
  std::vector<float> data;

  ImageBuf() = default;
  ImageBuf(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
  bool same_dims(const ImageBuf& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

inline ImageBuf constant_image(int h, int w, const RgbColor& c) {
  ImageBuf img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<float>(c.r);
      img.at(y, x, 1) = static_cast<float>(c.g);
      img.at(y, x, 2) = static_cast<float>(c.b);
    }
  return img;
}

// 8-bit RGB(A) PNG -> unit-interval 3-channel buffer. Gray and palette
// images are expanded; alpha is dropped.
inline ImageBuf read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("corrupt PNG: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  ImageBuf img(h, w, 3);
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(row[x * 3 + c]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

namespace detail {

inline uint8_t quantize8(float v) {
  const float s = v * 255.0f + 0.5f;
  return static_cast<uint8_t>(s < 0.0f ? 0.0f : (s > 255.0f ? 255.0f : s));
}

inline void write_png_raw(const std::string& path, int h, int w, int channels,
                          const std::vector<uint8_t>& bytes) {
  // Write to a temp file in place, then rename, so failures leave no
  // partial output.
  const std::string tmp = path + ".tmp";
  FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (!fp) throw IoError("cannot open " + tmp + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng init failed for " + tmp);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    std::remove(tmp.c_str());
    throw IoError("PNG write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(
                           &bytes[static_cast<size_t>(y) * w * channels]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename " + tmp + " to " + path);
}

}  // namespace detail

inline void write_png(const std::string& path, const ImageBuf& img) {
  if (img.channels != 3)
    throw DimensionError("write_png expects a 3-channel image");
  std::vector<uint8_t> bytes(img.size());
  for (size_t i = 0; i < img.size(); ++i)
    bytes[i] = detail::quantize8(img.data[i]);
  detail::write_png_raw(path, img.height, img.width, 3, bytes);
}

inline void write_png_gray(const std::string& path, const ImageBuf& img) {
  if (img.channels != 1)
    throw DimensionError("write_png_gray expects a 1-channel image");
  std::vector<uint8_t> bytes(img.size());
  for (size_t i = 0; i < img.size(); ++i)
    bytes[i] = detail::quantize8(img.data[i]);
  detail::write_png_raw(path, img.height, img.width, 1, bytes);
}

}  // namespace cdm

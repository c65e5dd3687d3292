#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "adnf/errors.hpp"

namespace adnf {

// Linear RGB in [0,1], row-major H x W x 3.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), data(w * h * 3, fill) {}

  std::size_t pixels() const { return width * height; }
  bool same_size(const Image& o) const { return width == o.width && height == o.height; }

  float& at(std::size_t x, std::size_t y, int c) { return data[(y * width + x) * 3 + static_cast<std::size_t>(c)]; }
  float at(std::size_t x, std::size_t y, int c) const { return data[(y * width + x) * 3 + static_cast<std::size_t>(c)]; }

  std::array<double, 3> pixel(std::size_t x, std::size_t y) const {
    return {at(x, y, 0), at(x, y, 1), at(x, y, 2)};
  }
  std::array<double, 3> pixel(std::size_t index) const {
    return {data[index * 3], data[index * 3 + 1], data[index * 3 + 2]};
  }
  void set(std::size_t x, std::size_t y, const std::array<double, 3>& c) {
    for (int i = 0; i < 3; ++i) at(x, y, i) = static_cast<float>(c[static_cast<std::size_t>(i)]);
  }

  bool operator==(const Image&) const = default;
};

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
inline Image quantized(const Image& img) {
  Image out = img;
  for (auto& v : out.data) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

// Single-channel 8-bit label image.
struct LabelImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  bool operator==(const LabelImage&) const = default;
};

namespace png {

namespace detail {

inline std::string encode(const void* pixels, std::size_t w, std::size_t h, png_uint_32 format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr))
    throw std::runtime_error(std::string("png encode: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr))
    throw std::runtime_error(std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> decode(const std::string& bytes, png_uint_32 format, std::size_t& w, std::size_t& h,
                                        const std::string& what) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw load_error(what + ": not a readable PNG (" + image.message + ")");
  image.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw load_error(what + ": PNG decode failed (" + image.message + ")");
  }
  w = image.width;
  h = image.height;
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw load_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), {}};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

inline std::string encode_rgb(const Image& img) {
  std::vector<std::uint8_t> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
  return detail::encode(bytes.data(), img.width, img.height, PNG_FORMAT_RGB);
}

inline Image decode_rgb(const std::string& bytes, const std::string& what = "image") {
  std::size_t w = 0, h = 0;
  const auto buf = detail::decode(bytes, PNG_FORMAT_RGB, w, h, what);
  Image img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

inline std::string encode_labels(const LabelImage& labels) {
  return detail::encode(labels.data.data(), labels.width, labels.height, PNG_FORMAT_GRAY);
}

inline LabelImage decode_labels(const std::string& bytes, const std::string& what = "mask") {
  LabelImage out;
  out.data = detail::decode(bytes, PNG_FORMAT_GRAY, out.width, out.height, what);
  return out;
}

inline void write_rgb(const std::string& path, const Image& img) { detail::write_file(path, encode_rgb(img)); }
inline Image read_rgb(const std::string& path) { return decode_rgb(detail::read_file(path), path); }
inline void write_labels(const std::string& path, const LabelImage& l) { detail::write_file(path, encode_labels(l)); }
inline LabelImage read_labels(const std::string& path) { return decode_labels(detail::read_file(path), path); }

}  // namespace png

}  // namespace adnf

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "diffserve/errors.hpp"

namespace diffserve {

GrayImage::GrayImage(int h, int w, float fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw DimensionError("image dimensions must be positive");
  data.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill);
}

Tensor to_tensor(const GrayImage& img) { return Tensor({1, img.height, img.width}, img.data); }

GrayImage gray_from_tensor(const Tensor& t) {
  if (!(t.rank() == 2 || (t.rank() == 3 && t.dim(0) == 1))) {
    throw DimensionError("gray image needs a [H x W] or [1 x H x W] tensor, got " + to_string(t.shape()));
  }
  GrayImage img(static_cast<int>(t.dim(t.rank() - 2)), static_cast<int>(t.dim(t.rank() - 1)));
  std::copy(t.data().begin(), t.data().end(), img.data.begin());
  return img;
}

// ---------------------------------------------------------------------------
// base64

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  // Tolerate a data URL prefix and embedded line breaks.
  if (const auto comma = text.find(','); text.starts_with("data:") && comma != std::string_view::npos) {
    text.remove_prefix(comma + 1);
  }
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c == '\n' || c == '\r' || c == ' ' || c == '\t') continue;
    clean += c;
  }
  if (clean.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(clean.size() / 4 * 3);
  for (std::size_t i = 0; i < clean.size(); i += 4) {
    std::array<int, 4> v{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = clean[i + k];
      if (c == '=') {
        if (i + 4 != clean.size() || k < 2) throw FormatError("misplaced base64 padding");
        ++pad;
        v[k] = 0;
        continue;
      }
      if (pad > 0) throw FormatError("misplaced base64 padding");
      v[k] = b64_value(c);
      if (v[k] < 0) throw FormatError(std::string("invalid base64 character '") + c + "'");
    }
    const std::uint32_t bits = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(bits >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(bits >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(bits));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

std::vector<std::uint8_t> write_png(const std::vector<std::uint8_t>& pixels, int width, int height,
                                    png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

std::uint8_t quantize(float v, float lo, float scale) {
  if (std::isnan(v)) return 0;
  const double q = std::round((static_cast<double>(std::clamp(v, lo, lo + 255.0f / scale)) - lo) * scale);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1..4 in libpng order (G, GA, RGB, RGBA)
  bool color = false;
  std::vector<std::uint8_t> pixels;
};

Decoded read_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
    throw FormatError("payload is not a PNG");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("PNG header unreadable: ") + image.message);
  }
  // Keep the stored channel layout, 8 bits per sample, no palette.
  image.format &= ~(PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLORMAP);
  Decoded d;
  d.width = static_cast<int>(image.width);
  d.height = static_cast<int>(image.height);
  d.channels = static_cast<int>(PNG_IMAGE_SAMPLE_CHANNELS(image.format));
  d.color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  d.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, d.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError(std::string("PNG decode failed: ") + image.message);
  }
  return d;
}

png_byte color_type_of(std::span<const std::uint8_t> bytes) {
  // IHDR follows the signature: length(4) "IHDR"(4) width(4) height(4) depth(1) color(1).
  return bytes.size() > 25 ? bytes[25] : 0xff;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("PNG encode needs a [3 x H x W] image, got " + to_string(image.shape()));
  }
  const auto h = image.dim(1), w = image.dim(2), plane = h * w;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(plane * 3));
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>(i * 3 + c)] = quantize(image[c * plane + i], -1.0f, 127.5f);
  return write_png(px, static_cast<int>(w), static_cast<int>(h), PNG_FORMAT_RGB);
}

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
  std::vector<std::uint8_t> px(image.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize(image.data[i], 0.0f, 255.0f);
  return write_png(px, image.width, image.height, PNG_FORMAT_GRAY);
}

Tensor decode_png_rgb(std::span<const std::uint8_t> bytes) {
  const Decoded d = read_png(bytes);
  if (color_type_of(bytes) != PNG_COLOR_TYPE_RGB) {
    throw FormatError("PNG is not 8-bit RGB (colour type " + std::to_string(color_type_of(bytes)) + ")");
  }
  const std::int64_t plane = static_cast<std::int64_t>(d.width) * d.height;
  Tensor out({3, d.height, d.width});
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      out[c * plane + i] = static_cast<float>(d.pixels[static_cast<std::size_t>(i * 3 + c)] / 127.5 - 1.0);
  return out;
}

GrayImage decode_png_gray(std::span<const std::uint8_t> bytes) {
  const Decoded d = read_png(bytes);
  GrayImage out(d.height, d.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::uint8_t* p = d.pixels.data() + i * static_cast<std::size_t>(d.channels);
    double v = d.color ? 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2] : p[0];
    out.data[i] = static_cast<float>(std::clamp(v / 255.0, 0.0, 1.0));
  }
  return out;
}

std::string to_png_base64(const Tensor& image) { return base64_encode(encode_png(image)); }

Tensor from_png_base64(std::string_view text) { return decode_png_rgb(base64_decode(text)); }

// ---------------------------------------------------------------------------
// Resampling

namespace {

void resize_plane(const float* src, std::int64_t h, std::int64_t w, float* dst, std::int64_t oh, std::int64_t ow) {
  const double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
  for (std::int64_t y = 0; y < oh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::int64_t>(fy);
    const auto y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (std::int64_t x = 0; x < ow; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::int64_t>(fx);
      const auto x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
      const double bot = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
      dst[y * ow + x] = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, std::int64_t height, std::int64_t width) {
  if (image.rank() != 3) throw DimensionError("resize_bilinear needs [c x h x w], got " + to_string(image.shape()));
  if (height <= 0 || width <= 0) throw DimensionError("resize target must be positive");
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  Tensor out({c, height, width});
  for (std::int64_t ch = 0; ch < c; ++ch) resize_plane(image.ptr() + ch * h * w, h, w, out.ptr() + ch * height * width, height, width);
  return out;
}

GrayImage resize_bilinear(const GrayImage& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  GrayImage out(height, width);
  resize_plane(image.data.data(), image.height, image.width, out.data.data(), height, width);
  return out;
}

}  // namespace diffserve

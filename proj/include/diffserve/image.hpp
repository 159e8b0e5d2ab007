// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffserve/tensor.hpp"

namespace diffserve {

/// Single-channel image, values in [0, 1], row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  GrayImage() = default;
  GrayImage(int h, int w, float fill = 0.0f);

  float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

/// [1 x H x W] tensor view of the same values.
Tensor to_tensor(const GrayImage& img);
GrayImage gray_from_tensor(const Tensor& t);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws FormatError on characters outside the standard alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// 8-bit RGB PNG; [-1, 1] maps to [0, 255] by round((x + 1) * 127.5).
std::vector<std::uint8_t> encode_png(const Tensor& image);
/// 8-bit grayscale PNG; [0, 1] maps to [0, 255] by round(x * 255).
std::vector<std::uint8_t> encode_png(const GrayImage& image);

/// Strict RGB decode into [3 x H x W] in [-1, 1]. Grayscale, alpha or
/// palette PNGs are rejected.
Tensor decode_png_rgb(std::span<const std::uint8_t> bytes);
/// Lenient decode for masks and condition images: gray or RGB, alpha
/// ignored; RGB is reduced with luminance weights. Values in [0, 1].
GrayImage decode_png_gray(std::span<const std::uint8_t> bytes);

std::string to_png_base64(const Tensor& image);
Tensor from_png_base64(std::string_view text);

/// Bilinear resampling of [c x h x w] to [c x height x width] (half-pixel centers).
Tensor resize_bilinear(const Tensor& image, std::int64_t height, std::int64_t width);
GrayImage resize_bilinear(const GrayImage& image, int height, int width);

}  // namespace diffserve

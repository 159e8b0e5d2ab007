// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "diffserve/image.hpp"
#include "diffserve/tensor.hpp"

namespace diffserve {

struct CannyOptions {
  double low_threshold = 0.1;
  double high_threshold = 0.3;
  double sigma = 1.0;
};

/// Binary edge map (values 0 or 1).
///
/// Conventions, all in double precision:
///  - gaussian blur with radius ceil(3 sigma), separable, reflect-101 borders
///  - Sobel gradients, reflect-101 borders
///  - magnitude divided by the largest possible Sobel magnitude (4 sqrt 2),
///    then rounded to a 1e-9 grid so ties are exact
///  - the gradient direction is quantized to one of 8 neighbours (4 axes);
///    a pixel survives suppression when its magnitude is strictly greater
///    than the neighbour behind it and at least the neighbour ahead of it
///  - strong >= high, weak >= low, 8-connected hysteresis from strong pixels
///  - the outermost one-pixel ring never carries an edge
GrayImage canny(const GrayImage& img, const CannyOptions& options = {});
GrayImage canny(const GrayImage& img, double low_threshold, double high_threshold, double sigma = 1.0);

/// Blurred (sigma 2) luminance, min-max normalized; a flat result maps to 0.
GrayImage depth_proxy(const GrayImage& img);

/// [3 x H x W] in [-1, 1] to luminance in [0, 1].
GrayImage rgb_to_gray(const Tensor& image);

/// Reflect-101 index into [0, n).
int reflect101(int i, int n);

/// Separable gaussian blur with radius ceil(3 sigma), reflect-101 borders.
std::vector<double> gaussian_blur(const std::vector<double>& plane, int height, int width, double sigma);

enum class Preprocessor { kNone, kCanny, kDepth };
Preprocessor parse_preprocessor(const std::string& name);
std::string to_string(Preprocessor p);

/// Condition map for a ControlNet from an RGB image.
GrayImage run_preprocessor(Preprocessor p, const GrayImage& gray, const CannyOptions& canny_options = {});

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "diffserve/errors.hpp"

namespace diffserve {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<double> gaussian_blur(const std::vector<double>& plane, int height, int width, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-(k * k) / (2.0 * sigma * sigma));
    total += kernel[static_cast<std::size_t>(k + radius)];
  }
  for (auto& v : kernel) v /= total;

  std::vector<double> tmp(plane.size()), out(plane.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k)
        s += kernel[static_cast<std::size_t>(k + radius)] * plane[static_cast<std::size_t>(y) * width + reflect101(x + k, width)];
      tmp[static_cast<std::size_t>(y) * width + x] = s;
    }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k)
        s += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(reflect101(y + k, height)) * width + x];
      out[static_cast<std::size_t>(y) * width + x] = s;
    }
  return out;
}

namespace {

double snap(double v) { return std::nearbyint(v * 1e9) / 1e9; }

int sign(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

}  // namespace

GrayImage canny(const GrayImage& img, const CannyOptions& o) {
  if (!(o.low_threshold >= 0.0 && o.low_threshold < o.high_threshold && o.high_threshold <= 1.0)) {
    throw InvalidArgument("canny thresholds must satisfy 0 <= low < high <= 1");
  }
  if (img.height < 5 || img.width < 5) throw InvalidArgument("canny needs an image of at least 5x5");
  const int h = img.height, w = img.width;
  const std::vector<double> src(img.data.begin(), img.data.end());
  const std::vector<double> b = gaussian_blur(src, h, w, o.sigma);
  auto at = [&](int y, int x) { return b[static_cast<std::size_t>(reflect101(y, h)) * w + reflect101(x, w)]; };

  const double max_magnitude = 4.0 * std::sqrt(2.0);
  std::vector<double> mag(b.size()), gxs(b.size()), gys(b.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
      const auto i = static_cast<std::size_t>(y) * w + x;
      gxs[i] = snap(gx);
      gys[i] = snap(gy);
      mag[i] = snap(std::hypot(gx, gy) / max_magnitude);
    }

  const double tan_22_5 = std::tan(std::acos(-1.0) / 8.0);
  // 0 = suppressed, 1 = weak, 2 = strong
  std::vector<int> cls(b.size(), 0);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      const double m = mag[i];
      if (m < o.low_threshold || m == 0.0) continue;
      const double ax = std::abs(gxs[i]), ay = std::abs(gys[i]);
      int dx, dy;
      if (ay <= tan_22_5 * ax) {
        dx = sign(gxs[i]);
        dy = 0;
      } else if (ax <= tan_22_5 * ay) {
        dx = 0;
        dy = sign(gys[i]);
      } else {
        dx = sign(gxs[i]);
        dy = sign(gys[i]);
      }
      const double ahead = mag[static_cast<std::size_t>(y + dy) * w + (x + dx)];
      const double behind = mag[static_cast<std::size_t>(y - dy) * w + (x - dx)];
      if (!(m > behind && m >= ahead)) continue;
      cls[i] = m >= o.high_threshold ? 2 : 1;
    }

  GrayImage out(h, w, 0.0f);
  std::deque<std::pair<int, int>> frontier;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (cls[static_cast<std::size_t>(y) * w + x] == 2) {
        out.at(y, x) = 1.0f;
        frontier.emplace_back(y, x);
      }
  while (!frontier.empty()) {
    const auto [y, x] = frontier.front();
    frontier.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        if (cls[static_cast<std::size_t>(ny) * w + nx] == 0 || out.at(ny, nx) == 1.0f) continue;
        out.at(ny, nx) = 1.0f;
        frontier.emplace_back(ny, nx);
      }
  }
  return out;
}

GrayImage canny(const GrayImage& img, double low_threshold, double high_threshold, double sigma) {
  return canny(img, CannyOptions{low_threshold, high_threshold, sigma});
}

GrayImage depth_proxy(const GrayImage& img) {
  const std::vector<double> src(img.data.begin(), img.data.end());
  const std::vector<double> b = gaussian_blur(src, img.height, img.width, 2.0);
  const auto [lo, hi] = std::minmax_element(b.begin(), b.end());
  const double range = *hi - *lo;
  GrayImage out(img.height, img.width, 0.0f);
  if (!(range > 1e-12)) return out;
  for (std::size_t i = 0; i < b.size(); ++i) out.data[i] = static_cast<float>((b[i] - *lo) / range);
  return out;
}

GrayImage rgb_to_gray(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("rgb_to_gray needs a [3 x H x W] image, got " + to_string(image.shape()));
  }
  const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  GrayImage out(h, w);
  for (std::size_t i = 0; i < plane; ++i) {
    const double r = (image[i] + 1.0) / 2.0, g = (image[plane + i] + 1.0) / 2.0, bl = (image[2 * plane + i] + 1.0) / 2.0;
    out.data[i] = static_cast<float>(std::clamp(0.299 * r + 0.587 * g + 0.114 * bl, 0.0, 1.0));
  }
  return out;
}

Preprocessor parse_preprocessor(const std::string& name) {
  if (name == "none") return Preprocessor::kNone;
  if (name == "canny") return Preprocessor::kCanny;
  if (name == "depth") return Preprocessor::kDepth;
  throw InvalidArgument("unknown preprocessor '" + name + "' (known: canny, depth, none)");
}

std::string to_string(Preprocessor p) {
  switch (p) {
    case Preprocessor::kCanny:
      return "canny";
    case Preprocessor::kDepth:
      return "depth";
    case Preprocessor::kNone:
      break;
  }
  return "none";
}

GrayImage run_preprocessor(Preprocessor p, const GrayImage& gray, const CannyOptions& canny_options) {
  switch (p) {
    case Preprocessor::kCanny:
      return canny(gray, canny_options);
    case Preprocessor::kDepth:
      return depth_proxy(gray);
    case Preprocessor::kNone:
      break;
  }
  return gray;
}

}  // namespace diffserve

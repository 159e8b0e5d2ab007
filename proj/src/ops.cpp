// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "diffserve/errors.hpp"

namespace diffserve::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(t.shape()));
  }
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  const auto q = a / b;
  return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions disagree: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Tensor out({m, n});
  float* o = out.ptr();
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  for (std::int64_t i = 0; i < m; ++i) {
    float* orow = o + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const float av = pa[i * k + p];
      const float* brow = pb + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const auto n = x.dim(0), in = x.dim(1), out_features = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()));
  }
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != out_features)) {
    throw DimensionError("linear: bias " + to_string(bias->shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  Tensor out({n, out_features});
  const float* px = x.ptr();
  const float* pw = weight.ptr();
  float* po = out.ptr();
  for (std::int64_t i = 0; i < n; ++i) {
    const float* xrow = px + i * in;
    for (std::int64_t o = 0; o < out_features; ++o) {
      const float* wrow = pw + o * in;
      float acc = 0.0f;
      for (std::int64_t j = 0; j < in; ++j) acc += xrow[j] * wrow[j];
      po[i * out_features + o] = bias != nullptr ? acc + (*bias)[static_cast<std::size_t>(o)] : acc;
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, int stride, int padding) {
  require_rank(x, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const auto c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c_in) {
    throw DimensionError("conv2d channel mismatch: input " + to_string(x.shape()) + ", weight " +
                         to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw InvalidArgument("conv2d: stride must be >= 1, padding >= 0");
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != c_out)) {
    throw DimensionError("conv2d bias " + to_string(bias->shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  const std::int64_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::int64_t ow = (w + 2 * padding - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) {
    throw DimensionError("conv2d kernel " + to_string(weight.shape()) + " larger than padded input " +
                         to_string(x.shape()));
  }
  Tensor out({c_out, oh, ow});
  const float* px = x.ptr();
  const float* pw = weight.ptr();
  float* po = out.ptr();
  for (std::int64_t co = 0; co < c_out; ++co) {
    float* oplane = po + co * oh * ow;
    if (bias != nullptr) std::fill(oplane, oplane + oh * ow, (*bias)[static_cast<std::size_t>(co)]);
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      const float* iplane = px + ci * h * w;
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          const float wv = pw[((co * c_in + ci) * kh + ky) * kw + kx];
          // Output columns whose input column lies inside the image.
          const std::int64_t ox_lo = std::max<std::int64_t>(0, -floor_div(kx - padding, stride));
          const std::int64_t ox_hi = std::min<std::int64_t>(ow, floor_div(w - 1 + padding - kx, stride) + 1);
          for (std::int64_t oy = 0; oy < oh; ++oy) {
            const std::int64_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            const float* irow = iplane + iy * w;
            float* orow = oplane + oy * ow;
            if (stride == 1) {
              const float* src = irow - padding + kx;
              for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox * stride - padding + kx];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_same(const Tensor& x, const Tensor& weight, const Tensor* bias, int stride) {
  require_rank(weight, 4, "conv2d weight");
  if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0) {
    throw DimensionError("conv2d_same needs odd kernel sizes, got " + to_string(weight.shape()));
  }
  return conv2d(x, weight, bias, stride, static_cast<int>((weight.dim(2) - 1) / 2));
}

void softmax_rows_(Tensor& x) {
  require_rank(x, 2, "softmax");
  const auto rows = x.dim(0), cols = x.dim(1);
  for (std::int64_t i = 0; i < rows; ++i) {
    float* row = x.ptr() + i * cols;
    const float mx = *std::max_element(row, row + cols);
    float sum = 0.0f;
    for (std::int64_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const float inv = 1.0f / sum;
    for (std::int64_t j = 0; j < cols; ++j) row[j] *= inv;
  }
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_rank(q, 2, "attention q");
  require_rank(k, 2, "attention k");
  require_rank(v, 2, "attention v");
  const auto n = q.dim(0), d = q.dim(1), m = k.dim(0);
  if (k.dim(1) != d || v.dim(0) != m) {
    throw DimensionError("attention shape mismatch q " + to_string(q.shape()) + ", k " +
                         to_string(k.shape()) + ", v " + to_string(v.shape()));
  }
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
  Tensor scores({n, m});
  for (std::int64_t i = 0; i < n; ++i) {
    const float* qrow = q.ptr() + i * d;
    for (std::int64_t j = 0; j < m; ++j) {
      const float* krow = k.ptr() + j * d;
      float acc = 0.0f;
      for (std::int64_t c = 0; c < d; ++c) acc += qrow[c] * krow[c];
      scores[i * m + j] = acc * inv_sqrt_d;
    }
  }
  softmax_rows_(scores);
  return matmul(scores, v);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  require_rank(q, 2, "attention q");
  require_rank(k, 2, "attention k");
  require_rank(v, 2, "attention v");
  const auto d = q.dim(1);
  if (heads < 1 || d % heads != 0 || k.dim(1) != d || v.dim(1) != d) {
    throw DimensionError("multi_head_attention: " + std::to_string(heads) + " heads incompatible with q " +
                         to_string(q.shape()) + ", k " + to_string(k.shape()) + ", v " + to_string(v.shape()));
  }
  if (heads == 1) return attention(q, k, v);
  const auto hd = d / heads;
  auto slice = [hd, d](const Tensor& t, std::int64_t head) {
    Tensor s({t.dim(0), hd});
    for (std::int64_t r = 0; r < t.dim(0); ++r)
      std::copy_n(t.ptr() + r * d + head * hd, hd, s.ptr() + r * hd);
    return s;
  };
  Tensor out({q.dim(0), d});
  for (std::int64_t h = 0; h < heads; ++h) {
    const Tensor o = attention(slice(q, h), slice(k, h), slice(v, h));
    for (std::int64_t r = 0; r < q.dim(0); ++r)
      std::copy_n(o.ptr() + r * hd, hd, out.ptr() + r * d + h * hd);
  }
  return out;
}

void group_norm_(Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 2) throw DimensionError("group_norm needs a channel axis, got " + to_string(x.shape()));
  const auto c = x.dim(0);
  if (groups < 1 || c % groups != 0) {
    throw InvalidArgument("group_norm: " + std::to_string(groups) + " groups do not divide " +
                          std::to_string(c) + " channels");
  }
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c)) {
    throw DimensionError("group_norm affine parameters must have " + std::to_string(c) + " entries");
  }
  const auto per_channel = static_cast<std::int64_t>(x.numel()) / c;
  const auto cpg = c / groups;
  const auto count = cpg * per_channel;
  for (std::int64_t g = 0; g < groups; ++g) {
    float* base = x.ptr() + g * count;
    double sum = 0.0;
    for (std::int64_t i = 0; i < count; ++i) sum += base[i];
    const double mu = sum / static_cast<double>(count);
    double var = 0.0;
    for (std::int64_t i = 0; i < count; ++i) var += (base[i] - mu) * (base[i] - mu);
    var /= static_cast<double>(count);
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
    const float muf = static_cast<float>(mu);
    for (std::int64_t ch = 0; ch < cpg; ++ch) {
      const auto channel = static_cast<std::size_t>(g * cpg + ch);
      const float ga = gamma[channel], be = beta[channel];
      float* p = base + ch * per_channel;
      for (std::int64_t i = 0; i < per_channel; ++i) p[i] = (p[i] - muf) * inv * ga + be;
    }
  }
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
  Tensor out(x);
  group_norm_(out, groups, gamma, beta, eps);
  return out;
}

void layer_norm_(Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm on scalar");
  const auto d = x.shape().back();
  if (gamma.numel() != static_cast<std::size_t>(d) || beta.numel() != static_cast<std::size_t>(d)) {
    throw DimensionError("layer_norm affine parameters must have " + std::to_string(d) + " entries");
  }
  const auto rows = static_cast<std::int64_t>(x.numel()) / d;
  for (std::int64_t r = 0; r < rows; ++r) {
    float* p = x.ptr() + r * d;
    double sum = 0.0;
    for (std::int64_t i = 0; i < d; ++i) sum += p[i];
    const double mu = sum / static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(d);
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
    const float muf = static_cast<float>(mu);
    for (std::int64_t i = 0; i < d; ++i)
      p[i] = (p[i] - muf) * inv * gamma[static_cast<std::size_t>(i)] + beta[static_cast<std::size_t>(i)];
  }
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  Tensor out(x);
  layer_norm_(out, gamma, beta, eps);
  return out;
}

void silu_(Tensor& x) {
  for (auto& v : x.data()) v = v / (1.0f + std::exp(-v));
}

Tensor silu(const Tensor& x) {
  Tensor out(x);
  silu_(out);
  return out;
}

void gelu_(Tensor& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  for (auto& v : x.data()) v = 0.5f * v * (1.0f + std::erf(v * kInvSqrt2));
}

Tensor gelu(const Tensor& x) {
  Tensor out(x);
  gelu_(out);
  return out;
}

Tensor resize_nearest(const Tensor& x, int factor) {
  if (x.rank() < 2) throw DimensionError("resize_nearest needs at least 2 axes, got " + to_string(x.shape()));
  if (factor < 1) throw InvalidArgument("resize_nearest factor must be >= 1");
  Shape shape = x.shape();
  const auto h = shape[shape.size() - 2], w = shape[shape.size() - 1];
  shape[shape.size() - 2] = h * factor;
  shape[shape.size() - 1] = w * factor;
  Tensor out(shape);
  const auto planes = static_cast<std::int64_t>(x.numel()) / (h * w);
  const auto ow = w * factor;
  for (std::int64_t p = 0; p < planes; ++p) {
    const float* src = x.ptr() + p * h * w;
    float* dst = out.ptr() + p * h * w * factor * factor;
    for (std::int64_t oy = 0; oy < h * factor; ++oy) {
      const float* srow = src + (oy / factor) * w;
      for (std::int64_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = srow[ox / factor];
    }
  }
  return out;
}

void add_(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  float* pa = a.ptr();
  const float* pb = b.ptr();
  for (std::size_t i = 0; i < a.numel(); ++i) pa[i] += pb[i];
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out(a);
  add_(out, b);
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a);
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] -= b[i];
  return out;
}

void scale_(Tensor& a, float s) {
  for (auto& v : a.data()) v *= s;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a);
  scale_(out, s);
  return out;
}

Tensor axpby(float a, const Tensor& x, float b, const Tensor& y) {
  require_same_shape(x, y, "axpby");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

void add_channel_bias_(Tensor& x, std::span<const float> bias) {
  if (x.rank() < 1 || static_cast<std::size_t>(x.dim(0)) != bias.size()) {
    throw DimensionError("channel bias of " + std::to_string(bias.size()) + " entries for tensor " +
                         to_string(x.shape()));
  }
  const auto per = x.numel() / bias.size();
  for (std::size_t c = 0; c < bias.size(); ++c) {
    float* p = x.ptr() + c * per;
    for (std::size_t i = 0; i < per; ++i) p[i] += bias[c];
  }
}

void clamp_(Tensor& x, float lo, float hi) {
  for (auto& v : x.data()) v = std::clamp(v, lo, hi);
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  Tensor out(x);
  clamp_(out, lo, hi);
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_channels spatial mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data().begin(), a.data().end(), out.ptr());
  std::copy(b.data().begin(), b.data().end(), out.ptr() + a.numel());
  return out;
}

Tensor to_tokens(const Tensor& x) {
  require_rank(x, 3, "to_tokens");
  const auto c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out({hw, c});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < hw; ++p) out[p * c + ch] = x[ch * hw + p];
  return out;
}

Tensor from_tokens(const Tensor& tokens, std::int64_t h, std::int64_t w) {
  require_rank(tokens, 2, "from_tokens");
  if (tokens.dim(0) != h * w) {
    throw DimensionError("from_tokens: " + to_string(tokens.shape()) + " cannot fill " + std::to_string(h) +
                         "x" + std::to_string(w));
  }
  const auto c = tokens.dim(1), hw = h * w;
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < hw; ++p) out[ch * hw + p] = tokens[p * c + ch];
  return out;
}

float mean(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  return x.numel() == 0 ? 0.0f : static_cast<float>(s / static_cast<double>(x.numel()));
}

float stddev(const Tensor& x) {
  if (x.numel() == 0) return 0.0f;
  const double mu = mean(x);
  double s = 0.0;
  for (float v : x.data()) s += (v - mu) * (v - mu);
  return static_cast<float>(std::sqrt(s / static_cast<double>(x.numel())));
}

}  // namespace diffserve::ops

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "diffserve/tensor.hpp"

// Single-threaded reference kernels. Every op is a pure function of its
// inputs; in-place variants carry a trailing underscore.
namespace diffserve::ops {

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// x [n x in] times weight [out x in] transposed, plus optional bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias = nullptr);

Tensor transpose(const Tensor& a);

/// Cross-correlation of x [c_in x h x w] with weight [c_out x c_in x kh x kw].
/// Output spatial size is floor((h + 2p - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, int stride = 1,
              int padding = 0);
/// conv2d with "same" padding (k - 1) / 2; kernel sizes must be odd.
Tensor conv2d_same(const Tensor& x, const Tensor& weight, const Tensor* bias, int stride = 1);

/// softmax(q k^T / sqrt(d)) v for q [n x d], k [m x d], v [m x d_v].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);
/// Splits the feature axis into `heads` equal slices and attends per slice.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

void softmax_rows_(Tensor& x);

/// x is [c x ...]; statistics per group of c / groups channels.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
void group_norm_(Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
/// Normalizes the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
void layer_norm_(Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

Tensor silu(const Tensor& x);
void silu_(Tensor& x);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
void gelu_(Tensor& x);

/// Nearest-neighbour upsampling of the two trailing axes by an integer factor.
Tensor resize_nearest(const Tensor& x, int factor);

Tensor add(const Tensor& a, const Tensor& b);
void add_(Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
void scale_(Tensor& a, float s);
/// a * x + b * y
Tensor axpby(float a, const Tensor& x, float b, const Tensor& y);
/// Adds bias[c] to every element of channel c of x [c x ...].
void add_channel_bias_(Tensor& x, std::span<const float> bias);
Tensor clamp(const Tensor& x, float lo, float hi);
void clamp_(Tensor& x, float lo, float hi);

/// Concatenates [c_i x h x w] tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// [c x h x w] -> [h*w x c]
Tensor to_tokens(const Tensor& x);
/// [h*w x c] -> [c x h x w]
Tensor from_tokens(const Tensor& tokens, std::int64_t h, std::int64_t w);

float mean(const Tensor& x);
float stddev(const Tensor& x);

}  // namespace diffserve::ops

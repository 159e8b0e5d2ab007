// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/errors.hpp"
#include "diffserve/models.hpp"
#include "diffserve/ops.hpp"

namespace diffserve {

Tensor encode_text(const TextEncoderConfig& cfg, const WeightStore& w, std::span<const int> tokens) {
  if (static_cast<int>(tokens.size()) != cfg.max_tokens) {
    throw DimensionError("text encoder takes exactly " + std::to_string(cfg.max_tokens) + " tokens, got " +
                         std::to_string(tokens.size()));
  }
  const std::int64_t d = cfg.embed_dim;
  const Tensor& tok = w.get("token_embed");
  const Tensor& pos = w.get("pos_embed");
  Tensor x({cfg.max_tokens, d});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int id = tokens[i];
    if (id < 0 || id >= cfg.vocab_size) throw InvalidArgument("token id " + std::to_string(id) + " out of vocabulary");
    for (std::int64_t c = 0; c < d; ++c) {
      x[i * d + c] = tok[static_cast<std::size_t>(id) * d + c] + pos[i * d + c];
    }
  }
  auto lin = [&w](const Tensor& in, const std::string& name) {
    return ops::linear(in, w.get(name + ".weight"), &w.get(name + ".bias"));
  };
  for (int layer = 0; layer < cfg.layers; ++layer) {
    const std::string p = "layers." + std::to_string(layer);
    const Tensor n1 = ops::layer_norm(x, w.get(p + ".ln1.weight"), w.get(p + ".ln1.bias"));
    const Tensor a = ops::multi_head_attention(lin(n1, p + ".attn.q"), lin(n1, p + ".attn.k"), lin(n1, p + ".attn.v"),
                                               cfg.heads);
    ops::add_(x, lin(a, p + ".attn.out"));
    const Tensor n2 = ops::layer_norm(x, w.get(p + ".ln2.weight"), w.get(p + ".ln2.bias"));
    Tensor hidden = lin(n2, p + ".mlp.fc1");
    ops::gelu_(hidden);
    ops::add_(x, lin(hidden, p + ".mlp.fc2"));
  }
  ops::layer_norm_(x, w.get("final_ln.weight"), w.get("final_ln.bias"));
  return x;
}

namespace {

Tensor vae_conv(const WeightStore& w, const Tensor& x, const std::string& name, int stride = 1) {
  return ops::conv2d_same(x, w.get(name + ".weight"), &w.get(name + ".bias"), stride);
}

void check_image(const VAEConfig& cfg, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_channels) {
    throw DimensionError("VAE expects a [" + std::to_string(cfg.image_channels) + " x H x W] image, got " +
                         to_string(image.shape()));
  }
  if (image.dim(1) % cfg.downsample_factor != 0 || image.dim(2) % cfg.downsample_factor != 0) {
    throw DimensionError("image dims " + to_string(image.shape()) + " not divisible by downsample factor " +
                         std::to_string(cfg.downsample_factor));
  }
}

}  // namespace

Tensor vae_encode_unscaled(const VAEConfig& cfg, const WeightStore& w, const Tensor& image) {
  check_image(cfg, image);
  Tensor h = vae_conv(w, image, "encoder.conv_in");
  for (int i = 0; i < cfg.stages(); ++i) {
    const std::string p = "encoder.down." + std::to_string(i);
    h = vae_conv(w, h, p + ".conv");
    ops::silu_(h);
    h = vae_conv(w, h, p + ".downsample", 2);
    ops::silu_(h);
  }
  return vae_conv(w, h, "encoder.conv_out");
}

Tensor vae_encode(const VAEConfig& cfg, const WeightStore& w, const Tensor& image) {
  Tensor z = vae_encode_unscaled(cfg, w, image);
  ops::scale_(z, cfg.scaling_factor);
  return z;
}

Tensor vae_decode(const VAEConfig& cfg, const WeightStore& w, const Tensor& latent) {
  if (latent.rank() != 3 || latent.dim(0) != cfg.latent_channels) {
    throw DimensionError("VAE decoder expects a [" + std::to_string(cfg.latent_channels) + " x h x w] latent, got " +
                         to_string(latent.shape()));
  }
  Tensor h = ops::scale(latent, 1.0f / cfg.scaling_factor);
  h = vae_conv(w, h, "decoder.conv_in");
  ops::silu_(h);
  for (int i = cfg.stages(); i >= 1; --i) {
    const std::string p = "decoder.up." + std::to_string(i);
    h = vae_conv(w, h, p + ".conv");
    ops::silu_(h);
    h = vae_conv(w, ops::resize_nearest(h, 2), p + ".upsample");
    ops::silu_(h);
  }
  h = vae_conv(w, h, "decoder.conv_out");
  ops::clamp_(h, -1.0f, 1.0f);
  return h;
}

}  // namespace diffserve

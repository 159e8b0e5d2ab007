// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "diffserve/errors.hpp"
#include "diffserve/models.hpp"
#include "diffserve/ops.hpp"

namespace diffserve {

Tensor timestep_embedding(int timestep, int dim) {
  if (dim < 2 || dim % 2 != 0) throw InvalidArgument("timestep embedding width must be even, got " + std::to_string(dim));
  const int half = dim / 2;
  Tensor out({dim});
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = static_cast<double>(timestep) * freq;
    out[static_cast<std::size_t>(i)] = static_cast<float>(std::sin(arg));
    out[static_cast<std::size_t>(half + i)] = static_cast<float>(std::cos(arg));
  }
  return out;
}

namespace {

/// Walks the U-Net graph for one configuration and weight namespace.
/// The in-place and allocating branches perform identical float operations
/// in identical order; they differ only in where results are stored.
class UNetRunner {
 public:
  UNetRunner(const UNetConfig& cfg, const WeightStore& weights, std::string prefix, const UNetExecution& exec)
      : cfg_(cfg), w_(weights), prefix_(std::move(prefix)), exec_(exec) {}

  Tensor time_features(int timestep) const {
    if (timestep < 0 || timestep >= cfg_.num_train_timesteps) {
      throw InvalidArgument("timestep " + std::to_string(timestep) + " outside [0, " +
                            std::to_string(cfg_.num_train_timesteps) + ")");
    }
    Tensor sinusoid_local;
    const Tensor* sinusoid = exec_.time_sinusoid;
    if (sinusoid == nullptr) {
      sinusoid_local = timestep_embedding(timestep, cfg_.base_channels);
      sinusoid = &sinusoid_local;
    }
    Tensor h = linear(sinusoid->reshaped({1, cfg_.base_channels}), "time_embed.0");
    ops::silu_(h);
    h = linear(h, "time_embed.2");
    // Every residual block consumes silu(temb).
    ops::silu_(h);
    return h;
  }

  void check_latent(const Tensor& latent) const {
    if (latent.rank() != 3 || latent.dim(0) != cfg_.in_channels) {
      throw DimensionError("U-Net expects a [" + std::to_string(cfg_.in_channels) + " x h x w] latent, got " +
                           to_string(latent.shape()));
    }
    const std::int64_t div = std::int64_t{1} << (cfg_.levels() - 1);
    for (std::size_t a = 1; a <= 2; ++a) {
      if (latent.dim(a) < 4 || latent.dim(a) % div != 0) {
        throw DimensionError("U-Net latent spatial dims must be >= 4 and divisible by " + std::to_string(div) +
                             ", got " + to_string(latent.shape()));
      }
    }
  }

  /// Down path; returns skips in push order, leaves the running feature in `h`.
  std::vector<Tensor> down(Tensor& h, const Tensor& temb, const Tensor& text, std::size_t& attn_index) const {
    std::vector<Tensor> skips;
    skips.push_back(h);
    for (int l = 0; l < cfg_.levels(); ++l) {
      const std::string p = "down." + std::to_string(l);
      for (int i = 0; i < cfg_.num_res_blocks; ++i) {
        h = resblock(h, temb, p + ".res." + std::to_string(i));
        if (cfg_.has_attention(l)) h = attention_block(h, text, p + ".attn." + std::to_string(i), attn_index++);
        skips.push_back(h);
      }
      if (l + 1 < cfg_.levels()) {
        h = conv(h, p + ".downsample", 2);
        skips.push_back(h);
      }
    }
    return skips;
  }

  Tensor mid(const Tensor& h, const Tensor& temb, const Tensor& text, std::size_t& attn_index) const {
    Tensor x = resblock(h, temb, "mid.res.0");
    x = attention_block(x, text, "mid.attn.0", attn_index++);
    return resblock(x, temb, "mid.res.1");
  }

  Tensor up(Tensor h, std::vector<Tensor>& skips, const Tensor& temb, const Tensor& text,
            std::size_t& attn_index) const {
    for (int l = cfg_.levels() - 1; l >= 0; --l) {
      const std::string p = "up." + std::to_string(l);
      for (int i = 0; i <= cfg_.num_res_blocks; ++i) {
        Tensor joined = ops::concat_channels(h, skips.back());
        skips.pop_back();
        h = resblock(joined, temb, p + ".res." + std::to_string(i));
        if (cfg_.has_attention(l)) h = attention_block(h, text, p + ".attn." + std::to_string(i), attn_index++);
      }
      if (l > 0) h = conv(ops::resize_nearest(h, 2), p + ".upsample", 1);
    }
    return h;
  }

  Tensor out(const Tensor& h) const {
    Tensor x = norm_act(h, "out.norm");
    return conv(x, "out.conv", 1);
  }

  Tensor conv_in(const Tensor& latent) const { return conv(latent, "conv_in", 1); }

  void add_into(Tensor& target, const Tensor& addend) const {
    if (exec_.in_place) {
      ops::add_(target, addend);
    } else {
      target = ops::add(target, addend);
    }
  }

  Tensor cross_kv_projection(const Tensor& text, const std::string& block, bool value) const {
    return linear(text, block + (value ? ".attn2.v" : ".attn2.k"), false);
  }

 private:
  const Tensor& param(const std::string& name) const { return w_.get(prefix_ + name); }

  Tensor linear(const Tensor& x, const std::string& name, bool with_bias = true) const {
    const std::string wname = prefix_ + name + ".weight";
    const Tensor& base = w_.get(wname);
    const Tensor* bias = with_bias ? &w_.get(prefix_ + name + ".bias") : nullptr;
    if (exec_.overlay != nullptr) {
      if (auto merged = exec_.overlay->resolve(wname, base)) return ops::linear(x, *merged, bias);
    }
    return ops::linear(x, base, bias);
  }

  Tensor conv(const Tensor& x, const std::string& name, int stride) const {
    return ops::conv2d_same(x, param(name + ".weight"), &param(name + ".bias"), stride);
  }

  /// group_norm followed by silu; the input is left untouched.
  Tensor norm_act(const Tensor& x, const std::string& name) const {
    Tensor h = ops::group_norm(x, cfg_.norm_groups, param(name + ".weight"), param(name + ".bias"));
    if (exec_.in_place) {
      ops::silu_(h);
    } else {
      h = ops::silu(h);
    }
    return h;
  }

  Tensor resblock(const Tensor& x, const Tensor& temb, const std::string& p) const {
    Tensor h = norm_act(x, p + ".norm1");
    h = conv(h, p + ".conv1", 1);
    const Tensor tproj = linear(temb, p + ".time");
    if (exec_.in_place) {
      ops::add_channel_bias_(h, tproj.data());
      ops::group_norm_(h, cfg_.norm_groups, param(p + ".norm2.weight"), param(p + ".norm2.bias"));
      ops::silu_(h);
    } else {
      Tensor biased(h);
      ops::add_channel_bias_(biased, tproj.data());
      h = ops::group_norm(biased, cfg_.norm_groups, param(p + ".norm2.weight"), param(p + ".norm2.bias"));
      h = ops::silu(h);
    }
    h = conv(h, p + ".conv2", 1);
    if (w_.contains(prefix_ + p + ".skip.weight")) {
      add_into(h, conv(x, p + ".skip", 1));
    } else {
      add_into(h, x);
    }
    return h;
  }

  Tensor layer_normed(const Tensor& t, const std::string& name) const {
    return ops::layer_norm(t, param(name + ".weight"), param(name + ".bias"));
  }

  Tensor attention_block(const Tensor& x, const Tensor& text, const std::string& p, std::size_t index) const {
    const auto hgt = x.dim(1), wid = x.dim(2);
    Tensor tokens;
    {
      Tensor normed = ops::group_norm(x, cfg_.norm_groups, param(p + ".norm.weight"), param(p + ".norm.bias"));
      tokens = linear(ops::to_tokens(normed), p + ".proj_in");
    }
    {
      const Tensor n1 = layer_normed(tokens, p + ".ln1");
      const Tensor a = ops::multi_head_attention(linear(n1, p + ".attn1.q", false), linear(n1, p + ".attn1.k", false),
                                                 linear(n1, p + ".attn1.v", false), cfg_.attn_heads);
      add_into(tokens, linear(a, p + ".attn1.out"));
    }
    {
      const Tensor n2 = layer_normed(tokens, p + ".ln2");
      const Tensor q = linear(n2, p + ".attn2.q", false);
      Tensor a;
      if (exec_.text_kv != nullptr) {
        if (index >= exec_.text_kv->size()) throw DimensionError("cross-attention cache has too few entries");
        const auto& [k, v] = (*exec_.text_kv)[index];
        a = ops::multi_head_attention(q, k, v, cfg_.attn_heads);
      } else {
        a = ops::multi_head_attention(q, cross_kv_projection(text, p, false), cross_kv_projection(text, p, true),
                                      cfg_.attn_heads);
      }
      add_into(tokens, linear(a, p + ".attn2.out"));
    }
    {
      const Tensor n3 = layer_normed(tokens, p + ".ln3");
      Tensor f = linear(n3, p + ".ff.0");
      if (exec_.in_place) {
        ops::gelu_(f);
      } else {
        f = ops::gelu(f);
      }
      add_into(tokens, linear(f, p + ".ff.2"));
    }
    Tensor out = ops::from_tokens(linear(tokens, p + ".proj_out"), hgt, wid);
    add_into(out, x);
    return out;
  }

  const UNetConfig& cfg_;
  const WeightStore& w_;
  std::string prefix_;
  UNetExecution exec_;
};

void check_text(const UNetConfig& cfg, const Tensor& text_emb) {
  if (text_emb.rank() != 2 || text_emb.dim(1) != cfg.cross_attn_dim) {
    throw DimensionError("text embedding must be [tokens x " + std::to_string(cfg.cross_attn_dim) + "], got " +
                         to_string(text_emb.shape()));
  }
}

std::vector<std::string> attention_blocks(const UNetConfig& cfg) {
  std::vector<std::string> names;
  for (int l = 0; l < cfg.levels(); ++l)
    if (cfg.has_attention(l))
      for (int i = 0; i < cfg.num_res_blocks; ++i) names.push_back("down." + std::to_string(l) + ".attn." + std::to_string(i));
  names.emplace_back("mid.attn.0");
  for (int l = cfg.levels() - 1; l >= 0; --l)
    if (cfg.has_attention(l))
      for (int i = 0; i <= cfg.num_res_blocks; ++i) names.push_back("up." + std::to_string(l) + ".attn." + std::to_string(i));
  return names;
}

}  // namespace

CrossAttentionKV cross_attention_kv(const UNetConfig& cfg, const WeightStore& weights, const Tensor& text_emb,
                                    const WeightOverlay* overlay) {
  check_text(cfg, text_emb);
  UNetExecution exec;
  exec.overlay = overlay;
  const UNetRunner runner(cfg, weights, "", exec);
  CrossAttentionKV kv;
  for (const auto& block : attention_blocks(cfg)) {
    kv.emplace_back(runner.cross_kv_projection(text_emb, block, false), runner.cross_kv_projection(text_emb, block, true));
  }
  return kv;
}

Tensor unet_forward(const UNetConfig& cfg, const WeightStore& weights, const Tensor& latent, int timestep,
                    const Tensor& text_emb, std::span<const Tensor> control_residuals, const UNetExecution& exec) {
  const UNetRunner runner(cfg, weights, "", exec);
  runner.check_latent(latent);
  check_text(cfg, text_emb);
  const auto points = static_cast<std::size_t>(cfg.injection_points());
  if (!control_residuals.empty() && control_residuals.size() != points) {
    throw DimensionError("U-Net takes " + std::to_string(points) + " control residuals, got " +
                         std::to_string(control_residuals.size()));
  }

  const Tensor temb = runner.time_features(timestep);
  std::size_t attn_index = 0;
  Tensor h = runner.conv_in(latent);
  std::vector<Tensor> skips = runner.down(h, temb, text_emb, attn_index);
  h = runner.mid(h, temb, text_emb, attn_index);
  if (!control_residuals.empty()) {
    for (std::size_t i = 0; i + 1 < points; ++i) {
      if (control_residuals[i].shape() != skips[i].shape()) {
        throw DimensionError("control residual " + std::to_string(i) + " has shape " +
                             to_string(control_residuals[i].shape()) + ", skip is " + to_string(skips[i].shape()));
      }
      runner.add_into(skips[i], control_residuals[i]);
    }
    if (control_residuals.back().shape() != h.shape()) {
      throw DimensionError("mid control residual has shape " + to_string(control_residuals.back().shape()) +
                           ", mid output is " + to_string(h.shape()));
    }
    runner.add_into(h, control_residuals.back());
  }
  h = runner.up(std::move(h), skips, temb, text_emb, attn_index);
  return runner.out(h);
}

std::vector<Tensor> unet_encoder_taps(const UNetConfig& cfg, const WeightStore& weights, const std::string& prefix,
                                      const Tensor& latent, int timestep, const Tensor& text_emb,
                                      const Tensor* extra_after_conv_in) {
  const UNetRunner runner(cfg, weights, prefix, UNetExecution{});
  runner.check_latent(latent);
  check_text(cfg, text_emb);
  const Tensor temb = runner.time_features(timestep);
  std::size_t attn_index = 0;
  Tensor h = runner.conv_in(latent);
  if (extra_after_conv_in != nullptr) {
    if (extra_after_conv_in->shape() != h.shape()) {
      throw DimensionError("conditioning embedding " + to_string(extra_after_conv_in->shape()) +
                           " does not match conv_in output " + to_string(h.shape()));
    }
    ops::add_(h, *extra_after_conv_in);
  }
  std::vector<Tensor> taps = runner.down(h, temb, text_emb, attn_index);
  taps.push_back(runner.mid(h, temb, text_emb, attn_index));
  return taps;
}

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "diffserve/errors.hpp"
#include "diffserve/models.hpp"

namespace diffserve {

using nlohmann::json;

void TextEncoderConfig::validate() const {
  if (vocab_size < 259) throw InvalidArgument("text encoder vocab_size must cover 256 bytes + 3 specials");
  if (max_tokens < 2) throw InvalidArgument("text encoder max_tokens must be >= 2");
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
    throw InvalidArgument("text encoder embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                          std::to_string(heads));
  }
  if (layers < 1) throw InvalidArgument("text encoder needs at least one layer");
}

bool UNetConfig::has_attention(int level) const {
  if (attn_levels.empty()) return level == levels() - 1;
  return std::find(attn_levels.begin(), attn_levels.end(), level) != attn_levels.end();
}

int UNetConfig::injection_points() const { return static_cast<int>(injection_channels().size()); }

std::vector<int> UNetConfig::injection_channels() const {
  std::vector<int> ch{base_channels};
  for (int l = 0; l < levels(); ++l) {
    for (int i = 0; i < num_res_blocks; ++i) ch.push_back(channels_at(l));
    if (l + 1 < levels()) ch.push_back(channels_at(l));
  }
  ch.push_back(channels_at(levels() - 1));
  return ch;
}

void UNetConfig::validate() const {
  if (in_channels < 1 || base_channels < 1 || channel_mults.empty()) {
    throw InvalidArgument("U-Net needs positive channels and at least one level");
  }
  for (int m : channel_mults) {
    if (m < 1) throw InvalidArgument("U-Net channel multipliers must be positive");
  }
  if (num_res_blocks < 1) throw InvalidArgument("U-Net num_res_blocks must be >= 1");
  if (base_channels % 2 != 0) throw InvalidArgument("U-Net base_channels must be even (sinusoid width)");
  for (int l = 0; l < levels(); ++l) {
    const int c = channels_at(l);
    if (c % norm_groups != 0 || (2 * c) % norm_groups != 0) {
      throw InvalidArgument("U-Net norm_groups " + std::to_string(norm_groups) + " must divide level channels " +
                            std::to_string(c));
    }
    if (has_attention(l) && c % attn_heads != 0) {
      throw InvalidArgument("U-Net attn_heads must divide level channels " + std::to_string(c));
    }
  }
  for (int l : attn_levels) {
    if (l < 0 || l >= levels()) throw InvalidArgument("U-Net attn level " + std::to_string(l) + " out of range");
  }
  if (num_train_timesteps < 1) throw InvalidArgument("U-Net num_train_timesteps must be positive");
}

void VAEConfig::validate() const {
  if (downsample_factor < 1 || (downsample_factor & (downsample_factor - 1)) != 0) {
    throw InvalidArgument("VAE downsample_factor must be a power of two, got " + std::to_string(downsample_factor));
  }
  if (latent_channels < 1 || image_channels < 1 || base_channels < 1 || max_channels < base_channels) {
    throw InvalidArgument("VAE channel counts must be positive with max_channels >= base_channels");
  }
  if (!(scaling_factor > 0.0f)) throw InvalidArgument("VAE scaling_factor must be positive");
}

int VAEConfig::stages() const {
  int n = 0;
  for (int f = downsample_factor; f > 1; f >>= 1) ++n;
  return n;
}

int VAEConfig::channels_at(int stage) const {
  long c = base_channels;
  for (int i = 0; i < stage && c < max_channels; ++i) c *= 2;
  return static_cast<int>(std::min<long>(c, max_channels));
}

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw InvalidArgument(std::string(what) + " config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw InvalidArgument(std::string(what) + " config has unknown field '" + key + "'");
    }
  }
}

}  // namespace

void to_json(json& j, const TextEncoderConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"max_tokens", c.max_tokens}, {"embed_dim", c.embed_dim},
       {"layers", c.layers},         {"heads", c.heads}};
}

void from_json(const json& j, TextEncoderConfig& c) {
  reject_unknown_keys(j, {"vocab_size", "max_tokens", "embed_dim", "layers", "heads"}, "text encoder");
  TextEncoderConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.validate();
}

void to_json(json& j, const UNetConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"base_channels", c.base_channels},
       {"channel_mults", c.channel_mults},
       {"time_embed_dim", c.time_embed_dim},
       {"cross_attn_dim", c.cross_attn_dim},
       {"attn_levels", c.attn_levels},
       {"num_res_blocks", c.num_res_blocks},
       {"norm_groups", c.norm_groups},
       {"attn_heads", c.attn_heads},
       {"num_train_timesteps", c.num_train_timesteps}};
}

void from_json(const json& j, UNetConfig& c) {
  reject_unknown_keys(j,
                      {"in_channels", "base_channels", "channel_mults", "time_embed_dim", "cross_attn_dim",
                       "attn_levels", "num_res_blocks", "norm_groups", "attn_heads", "num_train_timesteps"},
                      "unet");
  UNetConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.channel_mults = j.value("channel_mults", d.channel_mults);
  c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
  c.cross_attn_dim = j.value("cross_attn_dim", d.cross_attn_dim);
  c.attn_levels = j.value("attn_levels", d.attn_levels);
  c.num_res_blocks = j.value("num_res_blocks", d.num_res_blocks);
  c.norm_groups = j.value("norm_groups", d.norm_groups);
  c.attn_heads = j.value("attn_heads", d.attn_heads);
  c.num_train_timesteps = j.value("num_train_timesteps", d.num_train_timesteps);
  c.validate();
}

void to_json(json& j, const VAEConfig& c) {
  j = {{"image_channels", c.image_channels},
       {"latent_channels", c.latent_channels},
       {"downsample_factor", c.downsample_factor},
       {"scaling_factor", c.scaling_factor},
       {"base_channels", c.base_channels},
       {"max_channels", c.max_channels}};
}

void from_json(const json& j, VAEConfig& c) {
  reject_unknown_keys(j,
                      {"image_channels", "latent_channels", "downsample_factor", "scaling_factor",
                       "base_channels", "max_channels"},
                      "vae");
  VAEConfig d;
  c.image_channels = j.value("image_channels", d.image_channels);
  c.latent_channels = j.value("latent_channels", d.latent_channels);
  c.downsample_factor = j.value("downsample_factor", d.downsample_factor);
  c.scaling_factor = j.value("scaling_factor", d.scaling_factor);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.max_channels = j.value("max_channels", d.max_channels);
  c.validate();
}

std::vector<int> tokenize(std::string_view text, int max_tokens) {
  if (max_tokens < 2) throw InvalidArgument("max_tokens must be >= 2 to hold BOS and EOS");
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(max_tokens));
  ids.push_back(kBosToken);
  const auto room = static_cast<std::size_t>(max_tokens - 2);
  for (std::size_t i = 0; i < text.size() && i < room; ++i) ids.push_back(static_cast<unsigned char>(text[i]));
  ids.push_back(kEosToken);
  ids.resize(static_cast<std::size_t>(max_tokens), kPadToken);
  return ids;
}

// ---------------------------------------------------------------------------
// Parameter layouts

namespace {

using Init = ParamSpec::Init;

void linear_spec(std::vector<ParamSpec>& out, const std::string& name, std::int64_t out_f, std::int64_t in_f,
                 bool bias = true) {
  out.push_back({name + ".weight", {out_f, in_f}, Init::kNormal});
  if (bias) out.push_back({name + ".bias", {out_f}, Init::kZeros});
}

void norm_spec(std::vector<ParamSpec>& out, const std::string& name, std::int64_t c) {
  out.push_back({name + ".weight", {c}, Init::kOnes});
  out.push_back({name + ".bias", {c}, Init::kZeros});
}

void conv_spec(std::vector<ParamSpec>& out, const std::string& name, std::int64_t c_out, std::int64_t c_in,
               std::int64_t k) {
  out.push_back({name + ".weight", {c_out, c_in, k, k}, Init::kNormal});
  out.push_back({name + ".bias", {c_out}, Init::kZeros});
}

void resblock_spec(std::vector<ParamSpec>& out, const std::string& p, const UNetConfig& cfg, int c_in, int c_out) {
  norm_spec(out, p + ".norm1", c_in);
  conv_spec(out, p + ".conv1", c_out, c_in, 3);
  linear_spec(out, p + ".time", c_out, cfg.time_embed_dim);
  norm_spec(out, p + ".norm2", c_out);
  conv_spec(out, p + ".conv2", c_out, c_out, 3);
  if (c_in != c_out) conv_spec(out, p + ".skip", c_out, c_in, 1);
}

void attn_spec(std::vector<ParamSpec>& out, const std::string& p, const UNetConfig& cfg, int c) {
  norm_spec(out, p + ".norm", c);
  linear_spec(out, p + ".proj_in", c, c);
  norm_spec(out, p + ".ln1", c);
  linear_spec(out, p + ".attn1.q", c, c, false);
  linear_spec(out, p + ".attn1.k", c, c, false);
  linear_spec(out, p + ".attn1.v", c, c, false);
  linear_spec(out, p + ".attn1.out", c, c);
  norm_spec(out, p + ".ln2", c);
  linear_spec(out, p + ".attn2.q", c, c, false);
  linear_spec(out, p + ".attn2.k", c, cfg.cross_attn_dim, false);
  linear_spec(out, p + ".attn2.v", c, cfg.cross_attn_dim, false);
  linear_spec(out, p + ".attn2.out", c, c);
  norm_spec(out, p + ".ln3", c);
  linear_spec(out, p + ".ff.0", 4 * c, c);
  linear_spec(out, p + ".ff.2", c, 4 * c);
  linear_spec(out, p + ".proj_out", c, c);
}

}  // namespace

std::vector<ParamSpec> text_encoder_params(const TextEncoderConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  const std::int64_t d = cfg.embed_dim;
  out.push_back({"token_embed", {cfg.vocab_size, d}, Init::kNormal});
  out.push_back({"pos_embed", {cfg.max_tokens, d}, Init::kNormal});
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string p = "layers." + std::to_string(i);
    norm_spec(out, p + ".ln1", d);
    linear_spec(out, p + ".attn.q", d, d);
    linear_spec(out, p + ".attn.k", d, d);
    linear_spec(out, p + ".attn.v", d, d);
    linear_spec(out, p + ".attn.out", d, d);
    norm_spec(out, p + ".ln2", d);
    linear_spec(out, p + ".mlp.fc1", 4 * d, d);
    linear_spec(out, p + ".mlp.fc2", d, 4 * d);
  }
  norm_spec(out, "final_ln", d);
  return out;
}

std::vector<ParamSpec> unet_params(const UNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  linear_spec(out, "time_embed.0", cfg.time_embed_dim, cfg.base_channels);
  linear_spec(out, "time_embed.2", cfg.time_embed_dim, cfg.time_embed_dim);
  conv_spec(out, "conv_in", cfg.base_channels, cfg.in_channels, 3);

  std::vector<int> skip_channels{cfg.base_channels};
  int ch = cfg.base_channels;
  for (int l = 0; l < cfg.levels(); ++l) {
    const int c = cfg.channels_at(l);
    for (int i = 0; i < cfg.num_res_blocks; ++i) {
      const std::string p = "down." + std::to_string(l);
      resblock_spec(out, p + ".res." + std::to_string(i), cfg, ch, c);
      ch = c;
      if (cfg.has_attention(l)) attn_spec(out, p + ".attn." + std::to_string(i), cfg, c);
      skip_channels.push_back(c);
    }
    if (l + 1 < cfg.levels()) {
      conv_spec(out, "down." + std::to_string(l) + ".downsample", c, c, 3);
      skip_channels.push_back(c);
    }
  }
  resblock_spec(out, "mid.res.0", cfg, ch, ch);
  attn_spec(out, "mid.attn.0", cfg, ch);
  resblock_spec(out, "mid.res.1", cfg, ch, ch);

  for (int l = cfg.levels() - 1; l >= 0; --l) {
    const int c = cfg.channels_at(l);
    for (int i = 0; i <= cfg.num_res_blocks; ++i) {
      const int skip = skip_channels.back();
      skip_channels.pop_back();
      const std::string p = "up." + std::to_string(l);
      resblock_spec(out, p + ".res." + std::to_string(i), cfg, ch + skip, c);
      ch = c;
      if (cfg.has_attention(l)) attn_spec(out, p + ".attn." + std::to_string(i), cfg, c);
    }
    if (l > 0) conv_spec(out, "up." + std::to_string(l) + ".upsample", c, c, 3);
  }
  norm_spec(out, "out.norm", ch);
  conv_spec(out, "out.conv", cfg.in_channels, ch, 3);
  return out;
}

std::vector<ParamSpec> vae_params(const VAEConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  const int n = cfg.stages();
  conv_spec(out, "encoder.conv_in", cfg.channels_at(0), cfg.image_channels, 3);
  for (int i = 0; i < n; ++i) {
    const std::string p = "encoder.down." + std::to_string(i);
    conv_spec(out, p + ".conv", cfg.channels_at(i), cfg.channels_at(i), 3);
    conv_spec(out, p + ".downsample", cfg.channels_at(i + 1), cfg.channels_at(i), 3);
  }
  conv_spec(out, "encoder.conv_out", cfg.latent_channels, cfg.channels_at(n), 3);
  conv_spec(out, "decoder.conv_in", cfg.channels_at(n), cfg.latent_channels, 3);
  for (int i = n; i >= 1; --i) {
    const std::string p = "decoder.up." + std::to_string(i);
    conv_spec(out, p + ".conv", cfg.channels_at(i), cfg.channels_at(i), 3);
    conv_spec(out, p + ".upsample", cfg.channels_at(i - 1), cfg.channels_at(i), 3);
  }
  conv_spec(out, "decoder.conv_out", cfg.image_channels, cfg.channels_at(0), 3);
  return out;
}

WeightStore init_weights(const std::vector<ParamSpec>& specs, Rng& rng, const std::string& prefix) {
  WeightStore store;
  for (const auto& spec : specs) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case Init::kNormal:
        for (auto& v : t.data()) v = rng.truncated_normal(0.02f);
        break;
      case Init::kOnes:
        for (auto& v : t.data()) v = 1.0f;
        break;
      case Init::kZeros:
        break;
    }
    store.add(prefix + spec.name, std::move(t));
  }
  return store;
}

void check_weights(const std::vector<ParamSpec>& specs, const WeightStore& weights, std::string_view what,
                   const std::string& prefix) {
  std::size_t expected = 0;
  for (const auto& spec : specs) {
    const std::string name = prefix + spec.name;
    if (!weights.contains(name)) {
      throw FormatError(std::string(what) + ": missing tensor '" + name + "'");
    }
    const auto& t = weights.get(name);
    if (t.shape() != spec.shape) {
      throw FormatError(std::string(what) + ": tensor '" + name + "' has shape " + to_string(t.shape()) +
                        ", config requires " + to_string(spec.shape));
    }
    ++expected;
  }
  std::size_t with_prefix = 0;
  for (const auto& [name, t] : weights.entries()) {
    if (name.starts_with(prefix)) ++with_prefix;
  }
  if (with_prefix != expected) {
    for (const auto& [name, t] : weights.entries()) {
      if (!name.starts_with(prefix)) continue;
      const bool known = std::any_of(specs.begin(), specs.end(),
                                     [&](const ParamSpec& s) { return prefix + s.name == name; });
      if (!known) throw FormatError(std::string(what) + ": unexpected tensor '" + name + "'");
    }
  }
}

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/adapters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

#include "diffserve/errors.hpp"
#include "diffserve/ops.hpp"

namespace diffserve {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDownSuffix = ".lora_A";
constexpr const char* kUpSuffix = ".lora_B";

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

}  // namespace

std::vector<std::string> lora_targets(const UNetConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& spec : unet_params(cfg)) {
    const auto& n = spec.name;
    if (n.find(".attn1.") == std::string::npos && n.find(".attn2.") == std::string::npos) continue;
    if (n.size() < 7 || n.compare(n.size() - 7, 7, ".weight") != 0) continue;
    out.push_back(n);
  }
  return out;
}

LoraAdapter init_lora(const std::string& name, const UNetConfig& cfg, Rng& rng, int rank, float alpha,
                      bool zero_up) {
  if (rank < 1) throw InvalidArgument("LoRA rank must be >= 1");
  LoraAdapter a;
  a.name = name;
  a.rank = rank;
  a.alpha = alpha;
  const float down_std = 1.0f / std::sqrt(static_cast<float>(rank));
  const auto specs = unet_params(cfg);
  for (const auto& target : lora_targets(cfg)) {
    const auto it = std::find_if(specs.begin(), specs.end(), [&](const ParamSpec& s) { return s.name == target; });
    const auto out_f = it->shape[0], in_f = it->shape[1];
    LoraDelta d{Tensor({rank, in_f}), Tensor({out_f, rank})};
    for (auto& v : d.down.data()) v = rng.normal() * down_std;
    if (!zero_up) {
      for (auto& v : d.up.data()) v = rng.normal() * 0.02f;
    }
    a.deltas.emplace(target, std::move(d));
  }
  return a;
}

void validate_lora(const LoraAdapter& adapter, const WeightStore& unet) {
  for (const auto& [target, d] : adapter.deltas) {
    if (!unet.contains(target)) {
      throw NotFound("LoRA '" + adapter.name + "' targets missing weight '" + target + "'");
    }
    const Tensor& w = unet.get(target);
    const bool ok = w.rank() == 2 && d.down.rank() == 2 && d.up.rank() == 2 && d.down.dim(0) == adapter.rank &&
                    d.up.dim(1) == adapter.rank && d.up.dim(0) == w.dim(0) && d.down.dim(1) == w.dim(1);
    if (!ok) {
      throw DimensionError("LoRA '" + adapter.name + "' factors " + to_string(d.up.shape()) + " x " +
                           to_string(d.down.shape()) + " do not compose to weight '" + target + "' " +
                           to_string(w.shape()));
    }
  }
}

Tensor lora_delta(const LoraAdapter& adapter, const LoraDelta& delta, float strength) {
  Tensor product = ops::matmul(delta.up, delta.down);
  const float unit = adapter.scale();
  for (auto& v : product.data()) v = strength * (unit * v);
  return product;
}

Tensor lora_merge(const Tensor& base, const LoraAdapter& adapter, const LoraDelta& delta, float strength) {
  Tensor d = lora_delta(adapter, delta, strength);
  if (d.shape() != base.shape()) {
    throw DimensionError("LoRA delta " + to_string(d.shape()) + " does not match weight " + to_string(base.shape()));
  }
  for (std::size_t i = 0; i < d.numel(); ++i) d[i] = base[i] + d[i];
  return d;
}

DynamicLora::DynamicLora(LoraPtr adapter, float strength) : adapter_(std::move(adapter)), strength_(strength) {
  if (!adapter_) throw InvalidArgument("DynamicLora needs an adapter");
  if (!(strength_ >= 0.0f && strength_ <= 1.0f)) throw InvalidArgument("LoRA strength must be in [0, 1]");
}

std::optional<Tensor> DynamicLora::resolve(std::string_view name, const Tensor& base) const {
  if (strength_ == 0.0f) return std::nullopt;
  auto it = adapter_->deltas.find(std::string(name));
  if (it == adapter_->deltas.end()) return std::nullopt;
  return lora_merge(base, *adapter_, it->second, strength_);
}

std::string DynamicLora::cache_key() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "@%p:%08x", static_cast<const void*>(adapter_.get()),
                std::bit_cast<std::uint32_t>(strength_));
  return "lora:" + adapter_->name + buf;
}

namespace {

std::shared_ptr<ModelBundle> apply_signed(const ModelBundle& src, const LoraAdapter& adapter, float strength) {
  validate_lora(adapter, src.unet);
  auto out = std::make_shared<ModelBundle>(src);
  if (strength == 0.0f) return out;
  for (const auto& [target, d] : adapter.deltas) {
    Tensor& w = out->unet.get_mutable(target);
    w = lora_merge(w, adapter, d, strength);
  }
  return out;
}

}  // namespace

std::shared_ptr<ModelBundle> fold_lora(const ModelBundle& bundle, const LoraAdapter& adapter, float strength) {
  return apply_signed(bundle, adapter, strength);
}

std::shared_ptr<ModelBundle> unfold_lora(const ModelBundle& folded, const LoraAdapter& adapter, float strength) {
  return apply_signed(folded, adapter, -strength);
}

fs::path save_lora(const LoraAdapter& adapter, const fs::path& dir) {
  WeightStore store;
  for (const auto& [target, d] : adapter.deltas) {
    store.add(target + kDownSuffix, d.down);
    store.add(target + kUpSuffix, d.up);
  }
  const json config = {{"name", adapter.name}, {"rank", adapter.rank}, {"alpha", adapter.alpha}};
  return save_weight_file(dir, adapter.name, "lora", config, store);
}

LoraAdapter load_lora(const fs::path& manifest_path) {
  WeightFile file = load_weight_file(manifest_path);
  if (file.model_kind != "lora") {
    throw FormatError(manifest_path.string() + " holds a '" + file.model_kind + "', not a lora");
  }
  LoraAdapter a;
  try {
    a.name = file.config.at("name").get<std::string>();
    a.rank = file.config.at("rank").get<int>();
    a.alpha = file.config.at("alpha").get<float>();
  } catch (const json::exception& e) {
    throw FormatError("malformed lora config in " + manifest_path.string() + ": " + e.what());
  }
  if (a.rank < 1) throw FormatError("lora rank must be >= 1 in " + manifest_path.string());
  const std::string down_suffix = kDownSuffix, up_suffix = kUpSuffix;
  for (const auto& [name, t] : file.weights.entries()) {
    const bool is_down = name.ends_with(down_suffix);
    if (!is_down && !name.ends_with(up_suffix)) {
      throw FormatError("unexpected tensor '" + name + "' in lora " + manifest_path.string());
    }
    const std::string target = name.substr(0, name.size() - (is_down ? down_suffix.size() : up_suffix.size()));
    (is_down ? a.deltas[target].down : a.deltas[target].up) = t;
  }
  for (const auto& [target, d] : a.deltas) {
    if (d.down.empty() || d.up.empty()) {
      throw FormatError("lora target '" + target + "' is missing a factor in " + manifest_path.string());
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// ControlNet

void ControlNetConfig::validate() const {
  unet.validate();
  if (conditioning_channels < 1) throw InvalidArgument("conditioning_channels must be >= 1");
  if (downsample_factor < 1 || !std::has_single_bit(static_cast<unsigned>(downsample_factor))) {
    throw InvalidArgument("controlnet downsample_factor must be a power of 2");
  }
  if (embed_channels < 1) throw InvalidArgument("embed_channels must be >= 1");
}

void to_json(json& j, const ControlNetConfig& c) {
  j = {{"unet", c.unet},
       {"conditioning_channels", c.conditioning_channels},
       {"downsample_factor", c.downsample_factor},
       {"embed_channels", c.embed_channels}};
}

void from_json(const json& j, ControlNetConfig& c) {
  for (const auto& [key, v] : j.items()) {
    if (key != "unet" && key != "conditioning_channels" && key != "downsample_factor" && key != "embed_channels") {
      throw InvalidArgument("controlnet config has unknown field '" + key + "'");
    }
  }
  ControlNetConfig d;
  c.unet = j.at("unet").get<UNetConfig>();
  c.conditioning_channels = j.value("conditioning_channels", d.conditioning_channels);
  c.downsample_factor = j.value("downsample_factor", d.downsample_factor);
  c.embed_channels = j.value("embed_channels", d.embed_channels);
  c.validate();
}

namespace {

bool is_branch_param(std::string_view name) {
  return starts_with(name, "time_embed.") || starts_with(name, "conv_in.") || starts_with(name, "down.") ||
         starts_with(name, "mid.");
}

int embed_stages(const ControlNetConfig& cfg) { return std::countr_zero(static_cast<unsigned>(cfg.downsample_factor)); }

}  // namespace

std::vector<ParamSpec> controlnet_params(const ControlNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  for (auto spec : unet_params(cfg.unet)) {
    if (!is_branch_param(spec.name)) continue;
    spec.name = "branch." + spec.name;
    out.push_back(std::move(spec));
  }
  const std::int64_t e = cfg.embed_channels;
  auto conv = [&out](const std::string& name, std::int64_t cout, std::int64_t cin, std::int64_t k,
                     ParamSpec::Init init) {
    out.push_back({name + ".weight", {cout, cin, k, k}, init});
    out.push_back({name + ".bias", {cout}, ParamSpec::Init::kZeros});
  };
  conv("cond_embed.in", e, cfg.conditioning_channels, 3, ParamSpec::Init::kNormal);
  for (int i = 0; i < embed_stages(cfg); ++i) {
    conv("cond_embed.down." + std::to_string(i), e, e, 3, ParamSpec::Init::kNormal);
  }
  conv("cond_embed.out", cfg.unet.base_channels, e, 3, ParamSpec::Init::kNormal);
  const auto chans = cfg.unet.injection_channels();
  for (std::size_t i = 0; i < chans.size(); ++i) {
    conv("zero_convs." + std::to_string(i), chans[i], chans[i], 1, ParamSpec::Init::kZeros);
  }
  return out;
}

ControlNetAdapter init_controlnet(const std::string& name, const ModelBundle& base, int conditioning_channels,
                                  Rng& rng) {
  ControlNetAdapter a;
  a.name = name;
  a.config.unet = base.config.unet;
  a.config.conditioning_channels = conditioning_channels;
  a.config.downsample_factor = base.config.vae.downsample_factor;
  const auto specs = controlnet_params(a.config);
  WeightStore fresh = init_weights(specs, rng);
  for (const auto& [pname, t] : fresh.entries()) {
    if (starts_with(pname, "branch.")) {
      a.weights.add(pname, base.unet.get(pname.substr(7)));
    } else {
      a.weights.add(pname, t);
    }
  }
  return a;
}

std::vector<Tensor> controlnet_forward(const ControlNetAdapter& adapter, const Tensor& latent, int timestep,
                                       const Tensor& text_emb, const Tensor& condition) {
  const auto& cfg = adapter.config;
  const auto& w = adapter.weights;
  if (condition.rank() != 3 || condition.dim(0) != cfg.conditioning_channels || latent.rank() != 3 ||
      condition.dim(1) != latent.dim(1) * cfg.downsample_factor ||
      condition.dim(2) != latent.dim(2) * cfg.downsample_factor) {
    throw DimensionError("condition " + to_string(condition.shape()) + " does not match latent " +
                         to_string(latent.shape()) + " at downsample factor " +
                         std::to_string(cfg.downsample_factor) + " with " +
                         std::to_string(cfg.conditioning_channels) + " channels");
  }
  for (float v : condition.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("condition values must lie in [0, 1]");
  }
  auto conv = [&w](const Tensor& x, const std::string& n, int stride) {
    return ops::conv2d_same(x, w.get(n + ".weight"), &w.get(n + ".bias"), stride);
  };
  Tensor e = conv(condition, "cond_embed.in", 1);
  ops::silu_(e);
  for (int i = 0; i < embed_stages(cfg); ++i) {
    e = conv(e, "cond_embed.down." + std::to_string(i), 2);
    ops::silu_(e);
  }
  e = conv(e, "cond_embed.out", 1);
  std::vector<Tensor> taps = unet_encoder_taps(cfg.unet, w, "branch.", latent, timestep, text_emb, &e);
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const std::string n = "zero_convs." + std::to_string(i);
    taps[i] = ops::conv2d(taps[i], w.get(n + ".weight"), &w.get(n + ".bias"));
  }
  return taps;
}

std::vector<Tensor> conditioning_scale(const std::vector<Tensor>& residuals, float s) {
  if (!(s >= 0.0f)) throw InvalidArgument("conditioning scale must be >= 0");
  std::vector<Tensor> out;
  out.reserve(residuals.size());
  for (const auto& r : residuals) out.push_back(s == 1.0f ? r : ops::scale(r, s));
  return out;
}

fs::path save_controlnet(const ControlNetAdapter& adapter, const fs::path& dir) {
  json config = adapter.config;
  config["name"] = adapter.name;
  return save_weight_file(dir, adapter.name, "controlnet", config, adapter.weights);
}

ControlNetAdapter load_controlnet(const fs::path& manifest_path) {
  WeightFile file = load_weight_file(manifest_path);
  if (file.model_kind != "controlnet") {
    throw FormatError(manifest_path.string() + " holds a '" + file.model_kind + "', not a controlnet");
  }
  ControlNetAdapter a;
  try {
    a.name = file.config.at("name").get<std::string>();
    json cfg = file.config;
    cfg.erase("name");
    a.config = cfg.get<ControlNetConfig>();
  } catch (const json::exception& e) {
    throw FormatError("malformed controlnet config in " + manifest_path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid controlnet config in " + manifest_path.string() + ": " + e.what());
  }
  check_weights(controlnet_params(a.config), file.weights, "controlnet");
  a.weights = std::move(file.weights);
  return a;
}

}  // namespace diffserve

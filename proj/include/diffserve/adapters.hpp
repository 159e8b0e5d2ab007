// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffserve/models.hpp"

namespace diffserve {

// ---------------------------------------------------------------------------
// LoRA

struct LoraDelta {
  Tensor down;  // A: [rank x in]
  Tensor up;    // B: [out x rank]
};

struct LoraAdapter {
  std::string name;
  int rank = 4;
  float alpha = 4.0f;
  /// Keyed by the full U-Net weight name, e.g. "mid.attn.0.attn1.q.weight".
  std::map<std::string, LoraDelta> deltas;

  float scale() const noexcept { return alpha / static_cast<float>(rank); }
};

using LoraPtr = std::shared_ptr<const LoraAdapter>;

/// Attention q/k/v/out projection weights of every U-Net attention block.
std::vector<std::string> lora_targets(const UNetConfig& cfg);

/// A ~ N(0, 1/rank), B = 0 unless `zero_up` is false (then B ~ N(0, 0.02)).
LoraAdapter init_lora(const std::string& name, const UNetConfig& cfg, Rng& rng, int rank = 4, float alpha = 4.0f,
                      bool zero_up = true);

/// Throws NotFound / DimensionError naming the first target the U-Net lacks
/// or whose shape the factors do not compose to.
void validate_lora(const LoraAdapter& adapter, const WeightStore& unet);

/// strength * ((alpha / rank) * B A). Exactly linear in strength.
Tensor lora_delta(const LoraAdapter& adapter, const LoraDelta& delta, float strength);
/// base + lora_delta(...). Shared by the dynamic and folded paths.
Tensor lora_merge(const Tensor& base, const LoraAdapter& adapter, const LoraDelta& delta, float strength);

/// Per-generation adapted weights; never writes the shared bundle.
class DynamicLora final : public WeightOverlay {
 public:
  DynamicLora(LoraPtr adapter, float strength);
  std::optional<Tensor> resolve(std::string_view name, const Tensor& base) const override;
  std::string cache_key() const override;

  const LoraAdapter& adapter() const noexcept { return *adapter_; }
  float strength() const noexcept { return strength_; }

 private:
  LoraPtr adapter_;
  float strength_;
};

/// New bundle whose U-Net targets hold the merged weights. strength 0
/// returns an unchanged copy.
std::shared_ptr<ModelBundle> fold_lora(const ModelBundle& bundle, const LoraAdapter& adapter, float strength);
/// Subtracts the same delta from a folded bundle.
std::shared_ptr<ModelBundle> unfold_lora(const ModelBundle& folded, const LoraAdapter& adapter, float strength);

std::filesystem::path save_lora(const LoraAdapter& adapter, const std::filesystem::path& dir);
LoraAdapter load_lora(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// ControlNet

struct ControlNetConfig {
  UNetConfig unet;
  int conditioning_channels = 1;
  /// Ratio of condition-image size to latent size (the VAE downsample factor).
  int downsample_factor = 8;
  int embed_channels = 16;

  void validate() const;
  bool operator==(const ControlNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const ControlNetConfig& c);
void from_json(const nlohmann::json& j, ControlNetConfig& c);

/// Weight names: "branch.<unet encoder/mid name>", "cond_embed.*",
/// "zero_convs.<i>.{weight,bias}".
struct ControlNetAdapter {
  std::string name;
  ControlNetConfig config;
  WeightStore weights;
};

using ControlNetPtr = std::shared_ptr<const ControlNetAdapter>;

std::vector<ParamSpec> controlnet_params(const ControlNetConfig& cfg);

/// Branch copied from the base U-Net encoder and mid block, random
/// conditioning embedder, zero-initialized 1x1 output convolutions.
ControlNetAdapter init_controlnet(const std::string& name, const ModelBundle& base, int conditioning_channels,
                                  Rng& rng);

/// One residual per U-Net injection point, in order.
std::vector<Tensor> controlnet_forward(const ControlNetAdapter& adapter, const Tensor& latent, int timestep,
                                       const Tensor& text_emb, const Tensor& condition);

std::vector<Tensor> conditioning_scale(const std::vector<Tensor>& residuals, float s);

std::filesystem::path save_controlnet(const ControlNetAdapter& adapter, const std::filesystem::path& dir);
ControlNetAdapter load_controlnet(const std::filesystem::path& manifest_path);

}  // namespace diffserve

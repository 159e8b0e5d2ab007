// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffserve/rng.hpp"
#include "diffserve/tensor.hpp"
#include "diffserve/weights.hpp"

namespace diffserve {

// ---------------------------------------------------------------------------
// Configs

struct TextEncoderConfig {
  int vocab_size = 259;  // 256 bytes + BOS/EOS/PAD
  int max_tokens = 32;
  int embed_dim = 64;
  int layers = 2;
  int heads = 4;

  void validate() const;
  bool operator==(const TextEncoderConfig&) const = default;
};

struct UNetConfig {
  int in_channels = 4;
  int base_channels = 32;
  std::vector<int> channel_mults{1, 2};
  int time_embed_dim = 128;
  int cross_attn_dim = 64;
  /// Levels (0 = full resolution) that carry attention; empty means deepest only.
  std::vector<int> attn_levels;
  int num_res_blocks = 1;
  int norm_groups = 8;
  int attn_heads = 4;
  int num_train_timesteps = 1000;

  void validate() const;
  int levels() const { return static_cast<int>(channel_mults.size()); }
  int channels_at(int level) const { return base_channels * channel_mults.at(static_cast<std::size_t>(level)); }
  bool has_attention(int level) const;
  /// Skip connections plus the mid block: where ControlNet residuals land.
  int injection_points() const;
  /// Channel count of each injection point, in residual order.
  std::vector<int> injection_channels() const;
  bool operator==(const UNetConfig&) const = default;
};

struct VAEConfig {
  int image_channels = 3;
  int latent_channels = 4;
  int downsample_factor = 8;
  float scaling_factor = 0.18215f;
  int base_channels = 16;
  int max_channels = 64;

  void validate() const;
  int stages() const;
  int channels_at(int stage) const;
  bool operator==(const VAEConfig&) const = default;
};

void to_json(nlohmann::json& j, const TextEncoderConfig& c);
void from_json(const nlohmann::json& j, TextEncoderConfig& c);
void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);
void to_json(nlohmann::json& j, const VAEConfig& c);
void from_json(const nlohmann::json& j, VAEConfig& c);

// ---------------------------------------------------------------------------
// Tokenizer: byte level, ids 0-255 are raw UTF-8 bytes.

inline constexpr int kBosToken = 256;
inline constexpr int kEosToken = 257;
inline constexpr int kPadToken = 258;

/// BOS, the UTF-8 bytes of `text`, EOS; truncated (EOS kept last) then
/// padded with PAD to exactly `max_tokens`.
std::vector<int> tokenize(std::string_view text, int max_tokens);

// ---------------------------------------------------------------------------
// Parameter layouts

struct ParamSpec {
  enum class Init { kNormal, kZeros, kOnes };
  std::string name;
  Shape shape;
  Init init = Init::kNormal;
};

std::vector<ParamSpec> text_encoder_params(const TextEncoderConfig& cfg);
std::vector<ParamSpec> unet_params(const UNetConfig& cfg);
std::vector<ParamSpec> vae_params(const VAEConfig& cfg);

/// Truncated normal (std 0.02) for kNormal entries.
WeightStore init_weights(const std::vector<ParamSpec>& specs, Rng& rng, const std::string& prefix = "");
/// Throws FormatError naming the first tensor that is missing, extra, or misshapen.
void check_weights(const std::vector<ParamSpec>& specs, const WeightStore& weights, std::string_view what,
                   const std::string& prefix = "");

// ---------------------------------------------------------------------------
// Forward passes

/// Replacement weights applied during a forward pass without touching the
/// shared store (dynamic LoRA).
class WeightOverlay {
 public:
  virtual ~WeightOverlay() = default;
  /// Weight to use in place of `base`, or nullopt when `name` is not covered.
  virtual std::optional<Tensor> resolve(std::string_view name, const Tensor& base) const = 0;
  /// Distinguishes overlays in caches of adapted activations.
  virtual std::string cache_key() const = 0;
};

/// [max_tokens x embed_dim] transformer output.
Tensor encode_text(const TextEncoderConfig& cfg, const WeightStore& weights, std::span<const int> tokens);

/// Sinusoidal embedding: lanes [0, dim/2) are sin(t * f_i), the rest cos(t * f_i),
/// f_i = 10000^(-i / (dim/2)).
Tensor timestep_embedding(int timestep, int dim);

/// Per-attention-block cross-attention keys and values for one text embedding.
using CrossAttentionKV = std::vector<std::pair<Tensor, Tensor>>;

/// Knobs that change how a U-Net pass executes but never what it computes.
struct UNetExecution {
  const WeightOverlay* overlay = nullptr;
  /// Elementwise stages overwrite their input instead of allocating.
  bool in_place = false;
  /// Precomputed timestep_embedding(t, base_channels).
  const Tensor* time_sinusoid = nullptr;
  /// Precomputed cross_attention_kv for the text embedding passed alongside.
  const CrossAttentionKV* text_kv = nullptr;
};

CrossAttentionKV cross_attention_kv(const UNetConfig& cfg, const WeightStore& weights, const Tensor& text_emb,
                                    const WeightOverlay* overlay = nullptr);

/// Predicted noise, same shape as `latent`. `control_residuals` is empty or
/// holds injection_points() tensors added to the skips and mid output.
Tensor unet_forward(const UNetConfig& cfg, const WeightStore& weights, const Tensor& latent, int timestep,
                    const Tensor& text_emb, std::span<const Tensor> control_residuals = {},
                    const UNetExecution& exec = {});

/// Encoder + mid half of the U-Net, used as the ControlNet branch. Weight
/// names are looked up under `prefix`; `extra_after_conv_in` (may be null)
/// is added to the conv_in output. Returns the tap outputs in injection order.
std::vector<Tensor> unet_encoder_taps(const UNetConfig& cfg, const WeightStore& weights, const std::string& prefix,
                                      const Tensor& latent, int timestep, const Tensor& text_emb,
                                      const Tensor* extra_after_conv_in);

/// Raw encoder output (before the scaling factor).
Tensor vae_encode_unscaled(const VAEConfig& cfg, const WeightStore& weights, const Tensor& image);
/// Encoder output multiplied by scaling_factor.
Tensor vae_encode(const VAEConfig& cfg, const WeightStore& weights, const Tensor& image);
/// Divides by scaling_factor, decodes, clamps to [-1, 1].
Tensor vae_decode(const VAEConfig& cfg, const WeightStore& weights, const Tensor& latent);

// ---------------------------------------------------------------------------
// Bundles

/// Process-unique identity; copies receive a fresh id so caches keyed on it
/// never confuse a folded bundle with its base.
class InstanceId {
 public:
  InstanceId() noexcept : value_(next()) {}
  InstanceId(const InstanceId&) noexcept : value_(next()) {}
  InstanceId& operator=(const InstanceId&) noexcept {
    value_ = next();
    return *this;
  }
  std::uint64_t value() const noexcept { return value_; }

 private:
  static std::uint64_t next() noexcept;
  std::uint64_t value_;
};

struct BundleConfig {
  TextEncoderConfig text;
  UNetConfig unet;
  VAEConfig vae;
};

struct ModelBundle {
  BundleConfig config;
  WeightStore text_encoder;
  WeightStore unet;
  WeightStore vae;
  InstanceId id;

  std::size_t param_count() const noexcept {
    return text_encoder.param_count() + unet.param_count() + vae.param_count();
  }
};

using BundlePtr = std::shared_ptr<const ModelBundle>;

std::shared_ptr<ModelBundle> init_seeded(const BundleConfig& config, std::uint64_t seed);
/// Writes bundle.json plus one manifest/blob pair per component into `dir`.
std::filesystem::path save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
/// Accepts the bundle.json path or the directory holding it.
std::shared_ptr<ModelBundle> load_bundle(const std::filesystem::path& path);

}  // namespace diffserve

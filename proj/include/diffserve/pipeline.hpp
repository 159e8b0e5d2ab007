// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "diffserve/adapters.hpp"
#include "diffserve/image.hpp"
#include "diffserve/models.hpp"
#include "diffserve/preprocess.hpp"
#include "diffserve/scheduler.hpp"

namespace diffserve {

enum class TaskKind { kTextToImage, kImageToImage, kInpaint, kEdit };

/// "t2i", "i2i", "inpaint", "edit".
TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

struct PipelineParams {
  std::string prompt;
  std::string negative_prompt;
  int steps = 25;
  float guidance_scale = 7.5f;
  int width = 64;
  int height = 64;
  std::uint64_t seed = 0;
  /// Fraction of the schedule re-run on top of the init image (i2i, edit).
  float strength = 0.8f;
  std::string scheduler = "ddim";
  float eta = 0.0f;

  /// [3 x H x W] in [-1, 1].
  std::optional<Tensor> init_image;
  /// 1 = regenerate; binarized at 0.5.
  std::optional<GrayImage> mask_image;

  LoraPtr lora;
  float lora_strength = 1.0f;

  ControlNetPtr controlnet;
  float controlnet_scale = 1.0f;
  /// [3 x H x W] in [-1, 1]; edit falls back to the init image.
  std::optional<Tensor> condition_image;
  Preprocessor preprocessor = Preprocessor::kCanny;
  CannyOptions canny;

  /// Skip guidance: a single conditional U-Net pass per step.
  bool conditional_only = false;

  void attach_lora(LoraPtr adapter, float strength) {
    lora = std::move(adapter);
    lora_strength = strength;
  }
  void attach_controlnet(ControlNetPtr adapter, float scale) {
    controlnet = std::move(adapter);
    controlnet_scale = scale;
  }
};

/// uncond + s * (cond - uncond); s == 0 and s == 1 return the matching input.
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, float s);

/// round(strength * steps)
int executed_steps(float strength, int steps);

/// All off is the baseline; every combination produces the same images.
struct OptimizationConfig {
  /// Merge the LoRA into a cached copy of the bundle instead of adapting per pass.
  bool fold_lora = false;
  /// Memoize prompt embeddings and their cross-attention keys/values.
  bool cache_text_embeddings = false;
  /// Build noise tables, timesteps and time sinusoids once per (T, steps).
  bool precompute_schedule = false;
  /// Let U-Net stages overwrite their inputs instead of allocating.
  bool reuse_buffers = false;

  static OptimizationConfig all_on() { return {true, true, true, true}; }
  /// Every combination, baseline first.
  static std::vector<OptimizationConfig> all_combinations();
  std::string label() const;
  bool operator==(const OptimizationConfig&) const = default;
};

void to_json(nlohmann::json& j, const OptimizationConfig& c);
void from_json(const nlohmann::json& j, OptimizationConfig& c);

/// Per-run measurements; stage times in milliseconds.
struct RunStats {
  double tokenize_ms = 0;
  double text_encode_ms = 0;
  double unet_loop_ms = 0;
  double vae_decode_ms = 0;
  double png_encode_ms = 0;
  int denoise_steps = 0;
  int unet_evaluations = 0;
  /// Tracked-allocation high-water marks; zero when no tracker is installed.
  std::size_t unet_loop_peak_bytes = 0;
  std::size_t peak_bytes = 0;
};

/// Runs the four generation functions against one shared bundle. Reentrant:
/// caches are guarded and every generation owns its working state.
class Pipeline {
 public:
  explicit Pipeline(BundlePtr bundle, OptimizationConfig opt = {});

  Tensor text_to_image(const PipelineParams& p, RunStats* stats = nullptr) const;
  Tensor image_to_image(const PipelineParams& p, RunStats* stats = nullptr) const;
  Tensor inpaint(const PipelineParams& p, RunStats* stats = nullptr) const;
  /// image_to_image with a ControlNet condition derived from the init image
  /// when a ControlNet is attached and no condition image is given.
  Tensor edit(const PipelineParams& p, RunStats* stats = nullptr) const;

  Tensor run(TaskKind kind, const PipelineParams& p, RunStats* stats = nullptr) const;
  /// Images for seeds seed, seed + 1, ..., seed + count - 1.
  std::vector<Tensor> run_batch(TaskKind kind, const PipelineParams& p, int count) const;

  /// Throws InvalidArgument, NotFound or DimensionError for parameters the
  /// bundle cannot run. Missing images are reported by the task functions.
  void validate(const PipelineParams& p) const;

  const ModelBundle& bundle() const noexcept { return *bundle_; }
  const BundlePtr& bundle_ptr() const noexcept { return bundle_; }
  const OptimizationConfig& optimizations() const noexcept { return opt_; }
  void clear_caches();

 private:
  struct Prepared;

  Prepared prepare(const PipelineParams& p, RunStats* stats) const;
  Tensor denoise(const Prepared& prep, const PipelineParams& p, Tensor latent, std::size_t first_step,
                 const Tensor& noise, const Tensor* known_latent, const Tensor* latent_mask, RunStats* stats) const;
  Tensor decode(const Prepared& prep, const Tensor& latent, RunStats* stats) const;

  std::shared_ptr<const ModelBundle> folded_bundle(const PipelineParams& p) const;
  std::shared_ptr<const Tensor> text_embedding(const std::string& prompt, RunStats* stats) const;

  struct ScheduleTables {
    std::shared_ptr<const NoiseSchedule> schedule;
    std::vector<int> timesteps;
    std::vector<Tensor> sinusoids;
  };
  std::shared_ptr<const ScheduleTables> schedule_tables(int steps) const;

  BundlePtr bundle_;
  OptimizationConfig opt_;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const Tensor>> embedding_cache_;
  mutable std::map<std::string, std::shared_ptr<const CrossAttentionKV>> kv_cache_;
  mutable std::map<std::string, std::shared_ptr<const ModelBundle>> fold_cache_;
  mutable std::map<int, std::shared_ptr<const ScheduleTables>> schedule_cache_;
};

/// Conservative mask reduction: a latent cell regenerates when any
/// pixel of its block is at or above 0.5. Values are 0 or 1.
Tensor latent_mask(const GrayImage& mask, int factor);

/// [1 x H x W] condition for the ControlNet from an RGB image.
Tensor condition_from_image(const Tensor& image, Preprocessor preprocessor, const CannyOptions& canny);

}  // namespace diffserve

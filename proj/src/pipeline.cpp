// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/pipeline.hpp"

#include <bit>
#include <chrono>
#include <cmath>

#include "diffserve/alloc_tracker.hpp"
#include "diffserve/errors.hpp"
#include "diffserve/ops.hpp"

namespace diffserve {

using json = nlohmann::json;

TaskKind parse_task_kind(const std::string& name) {
  if (name == "t2i") return TaskKind::kTextToImage;
  if (name == "i2i") return TaskKind::kImageToImage;
  if (name == "inpaint") return TaskKind::kInpaint;
  if (name == "edit") return TaskKind::kEdit;
  throw InvalidArgument("unknown func_name '" + name + "' (known: edit, i2i, inpaint, t2i)");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kImageToImage:
      return "i2i";
    case TaskKind::kInpaint:
      return "inpaint";
    case TaskKind::kEdit:
      return "edit";
    case TaskKind::kTextToImage:
      break;
  }
  return "t2i";
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, float s) {
  if (eps_uncond.shape() != eps_cond.shape()) {
    throw DimensionError("guidance needs matching shapes, got " + to_string(eps_uncond.shape()) + " and " +
                         to_string(eps_cond.shape()));
  }
  // The affine form rounds; the endpoints are returned as given.
  if (s == 0.0f) return eps_uncond;
  if (s == 1.0f) return eps_cond;
  Tensor out(eps_uncond.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = eps_uncond[i] + s * (eps_cond[i] - eps_uncond[i]);
  return out;
}

int executed_steps(float strength, int steps) {
  return static_cast<int>(std::lround(static_cast<double>(strength) * steps));
}

std::vector<OptimizationConfig> OptimizationConfig::all_combinations() {
  std::vector<OptimizationConfig> out;
  for (int bits = 0; bits < 16; ++bits) {
    out.push_back({(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0, (bits & 8) != 0});
  }
  return out;
}

std::string OptimizationConfig::label() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  add(fold_lora, "fold_lora");
  add(cache_text_embeddings, "cache_text_embeddings");
  add(precompute_schedule, "precompute_schedule");
  add(reuse_buffers, "reuse_buffers");
  return out.empty() ? "baseline" : out;
}

void to_json(json& j, const OptimizationConfig& c) {
  j = json{{"fold_lora", c.fold_lora},
           {"cache_text_embeddings", c.cache_text_embeddings},
           {"precompute_schedule", c.precompute_schedule},
           {"reuse_buffers", c.reuse_buffers}};
}

void from_json(const json& j, OptimizationConfig& c) {
  if (!j.is_object()) throw InvalidArgument("optimization config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "fold_lora") {
      c.fold_lora = value.get<bool>();
    } else if (key == "cache_text_embeddings") {
      c.cache_text_embeddings = value.get<bool>();
    } else if (key == "precompute_schedule") {
      c.precompute_schedule = value.get<bool>();
    } else if (key == "reuse_buffers") {
      c.reuse_buffers = value.get<bool>();
    } else {
      throw InvalidArgument("unknown optimization '" + key + "'");
    }
  }
}

Tensor latent_mask(const GrayImage& mask, int factor) {
  if (mask.height % factor != 0 || mask.width % factor != 0) {
    throw DimensionError("mask of " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         " is not divisible by " + std::to_string(factor));
  }
  const int lh = mask.height / factor, lw = mask.width / factor;
  Tensor out({1, lh, lw});
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x) >= 0.5f) out[static_cast<std::size_t>(y / factor) * lw + x / factor] = 1.0f;
  return out;
}

Tensor condition_from_image(const Tensor& image, Preprocessor preprocessor, const CannyOptions& canny) {
  return to_tensor(run_preprocessor(preprocessor, rgb_to_gray(image), canny));
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string float_key(float v) { return std::to_string(std::bit_cast<std::uint32_t>(v)); }

// Copies `a` where mask is 1 and `b` elsewhere; mask is [1 x h x w] over c planes.
Tensor select_by_mask(const Tensor& mask, const Tensor& a, const Tensor& b) {
  const auto plane = static_cast<std::size_t>(mask.numel());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = mask[i % plane] == 1.0f ? a[i] : b[i];
  return out;
}

// Peak bookkeeping that restarts the tracker's high-water mark around the
// U-Net loop and folds the earlier peak back in afterwards.
struct PeakWatch {
  AllocationTracker* tracker = active_tracker();
  std::size_t before = tracker ? tracker->peak() : 0;
};

}  // namespace

struct Pipeline::Prepared {
  std::shared_ptr<const ModelBundle> bundle;
  std::unique_ptr<DynamicLora> overlay;
  std::shared_ptr<const Tensor> cond_emb;
  std::shared_ptr<const Tensor> uncond_emb;
  std::shared_ptr<const CrossAttentionKV> cond_kv;
  std::shared_ptr<const CrossAttentionKV> uncond_kv;
  std::shared_ptr<const ScheduleTables> tables;
  std::optional<Tensor> condition;
};

Pipeline::Pipeline(BundlePtr bundle, OptimizationConfig opt) : bundle_(std::move(bundle)), opt_(opt) {
  if (!bundle_) throw InvalidArgument("pipeline needs a model bundle");
}

void Pipeline::clear_caches() {
  const std::lock_guard lock(cache_mutex_);
  embedding_cache_.clear();
  kv_cache_.clear();
  fold_cache_.clear();
  schedule_cache_.clear();
}

void Pipeline::validate(const PipelineParams& p) const {
  const auto& cfg = bundle_->config;
  const int factor = cfg.vae.downsample_factor;
  if (p.width <= 0 || p.height <= 0 || p.width % factor != 0 || p.height % factor != 0) {
    throw InvalidArgument("width and height must be positive multiples of " + std::to_string(factor) + ", got " +
                          std::to_string(p.width) + "x" + std::to_string(p.height));
  }
  const int align = 1 << (cfg.unet.levels() - 1);
  if ((p.width / factor) % align != 0 || (p.height / factor) % align != 0) {
    throw InvalidArgument("latent size must be divisible by " + std::to_string(align));
  }
  if (p.steps < 1) throw InvalidArgument("steps must be >= 1");
  if (p.steps > cfg.unet.num_train_timesteps) {
    throw InvalidArgument("steps must not exceed " + std::to_string(cfg.unet.num_train_timesteps));
  }
  if (!(p.strength >= 0.0f && p.strength <= 1.0f)) throw InvalidArgument("strength must be in [0, 1]");
  if (!std::isfinite(p.guidance_scale)) throw InvalidArgument("guidance_scale must be finite");
  if (!(p.eta >= 0.0f && p.eta <= 1.0f)) throw InvalidArgument("eta must be in [0, 1]");
  if (!has_scheduler(p.scheduler)) get_scheduler(p.scheduler);  // throws NotFound with the known names
  if (p.lora) {
    if (!(p.lora_strength >= 0.0f && p.lora_strength <= 1.0f)) {
      throw InvalidArgument("lora_strength must be in [0, 1]");
    }
    validate_lora(*p.lora, bundle_->unet);
  }
  if (p.controlnet) {
    if (!(p.controlnet_scale >= 0.0f)) throw InvalidArgument("controlnet_scale must be >= 0");
    if (p.controlnet->config.unet != cfg.unet) {
      throw InvalidArgument("ControlNet '" + p.controlnet->name + "' was built for a different U-Net");
    }
  }
  const Shape image_shape{3, p.height, p.width};
  auto check_image = [&](const std::optional<Tensor>& img, const char* what) {
    if (img && img->shape() != image_shape) {
      throw DimensionError(std::string(what) + " has shape " + to_string(img->shape()) + ", expected " +
                           to_string(image_shape));
    }
  };
  check_image(p.init_image, "init_image");
  check_image(p.condition_image, "condition_image");
  if (p.mask_image && (p.mask_image->height != p.height || p.mask_image->width != p.width)) {
    throw DimensionError("mask_image is " + std::to_string(p.mask_image->height) + "x" +
                         std::to_string(p.mask_image->width) + ", expected " + std::to_string(p.height) + "x" +
                         std::to_string(p.width));
  }
}

std::shared_ptr<const ModelBundle> Pipeline::folded_bundle(const PipelineParams& p) const {
  const std::string key = std::to_string(reinterpret_cast<std::uintptr_t>(p.lora.get())) + "@" + float_key(p.lora_strength);
  {
    const std::lock_guard lock(cache_mutex_);
    if (auto it = fold_cache_.find(key); it != fold_cache_.end()) return it->second;
  }
  std::shared_ptr<const ModelBundle> folded = fold_lora(*bundle_, *p.lora, p.lora_strength);
  const std::lock_guard lock(cache_mutex_);
  return fold_cache_.emplace(key, std::move(folded)).first->second;
}

std::shared_ptr<const Tensor> Pipeline::text_embedding(const std::string& prompt, RunStats* stats) const {
  auto t0 = Clock::now();
  const auto tokens = tokenize(prompt, bundle_->config.text.max_tokens);
  if (stats) stats->tokenize_ms += elapsed_ms(t0);

  t0 = Clock::now();
  std::shared_ptr<const Tensor> emb;
  if (opt_.cache_text_embeddings) {
    const std::lock_guard lock(cache_mutex_);
    if (auto it = embedding_cache_.find(prompt); it != embedding_cache_.end()) emb = it->second;
  }
  if (!emb) {
    emb = std::make_shared<const Tensor>(encode_text(bundle_->config.text, bundle_->text_encoder, tokens));
    if (opt_.cache_text_embeddings) {
      const std::lock_guard lock(cache_mutex_);
      emb = embedding_cache_.emplace(prompt, emb).first->second;
    }
  }
  if (stats) stats->text_encode_ms += elapsed_ms(t0);
  return emb;
}

std::shared_ptr<const Pipeline::ScheduleTables> Pipeline::schedule_tables(int steps) const {
  if (opt_.precompute_schedule) {
    const std::lock_guard lock(cache_mutex_);
    if (auto it = schedule_cache_.find(steps); it != schedule_cache_.end()) return it->second;
  }
  const auto& ucfg = bundle_->config.unet;
  auto tables = std::make_shared<ScheduleTables>();
  tables->schedule = std::make_shared<const NoiseSchedule>(make_schedule(BetaMode::kLinear, ucfg.num_train_timesteps));
  tables->timesteps = select_timesteps(ucfg.num_train_timesteps, steps);
  if (opt_.precompute_schedule) {
    for (int t : tables->timesteps) tables->sinusoids.push_back(timestep_embedding(t, ucfg.base_channels));
    const std::lock_guard lock(cache_mutex_);
    return schedule_cache_.emplace(steps, std::move(tables)).first->second;
  }
  return tables;
}

Pipeline::Prepared Pipeline::prepare(const PipelineParams& p, RunStats* stats) const {
  validate(p);
  Prepared prep;
  prep.bundle = bundle_;
  if (p.lora && p.lora_strength != 0.0f) {
    if (opt_.fold_lora) {
      prep.bundle = folded_bundle(p);
    } else {
      prep.overlay = std::make_unique<DynamicLora>(p.lora, p.lora_strength);
    }
  }
  prep.cond_emb = text_embedding(p.prompt, stats);
  if (!p.conditional_only) prep.uncond_emb = text_embedding(p.negative_prompt, stats);

  if (opt_.cache_text_embeddings) {
    const auto t0 = Clock::now();
    const std::string unet_key = prep.overlay ? std::to_string(bundle_->id.value()) + "/" + prep.overlay->cache_key()
                                              : std::to_string(prep.bundle->id.value());
    auto kv_for = [&](const std::string& prompt, const Tensor& emb) {
      const std::string key = unet_key + "|" + prompt;
      {
        const std::lock_guard lock(cache_mutex_);
        if (auto it = kv_cache_.find(key); it != kv_cache_.end()) return it->second;
      }
      auto kv = std::make_shared<const CrossAttentionKV>(
          cross_attention_kv(prep.bundle->config.unet, prep.bundle->unet, emb, prep.overlay.get()));
      const std::lock_guard lock(cache_mutex_);
      return kv_cache_.emplace(key, std::move(kv)).first->second;
    };
    prep.cond_kv = kv_for(p.prompt, *prep.cond_emb);
    if (prep.uncond_emb) prep.uncond_kv = kv_for(p.negative_prompt, *prep.uncond_emb);
    if (stats) stats->text_encode_ms += elapsed_ms(t0);
  }
  prep.tables = schedule_tables(p.steps);
  return prep;
}

Tensor Pipeline::denoise(const Prepared& prep, const PipelineParams& p, Tensor latent, std::size_t first_step,
                         const Tensor& noise, const Tensor* known_latent, const Tensor* mask, RunStats* stats) const {
  const auto t0 = Clock::now();
  PeakWatch watch;
  if (watch.tracker) watch.tracker->reset_peak();

  const ModelBundle& b = *prep.bundle;
  const auto& tables = *prep.tables;
  SchedulerState state(tables.schedule, tables.timesteps, p.eta);
  state.step_index = first_step;
  const StepFn step = get_scheduler(p.scheduler);
  Rng step_rng = Rng(p.seed).split(2);
  const bool use_control = p.controlnet && prep.condition && p.controlnet_scale != 0.0f;

  auto eval = [&](const Tensor& x, int t, const Tensor& emb, const CrossAttentionKV* kv) {
    UNetExecution exec;
    exec.overlay = prep.overlay.get();
    exec.in_place = opt_.reuse_buffers;
    exec.text_kv = kv;
    if (!tables.sinusoids.empty()) exec.time_sinusoid = &tables.sinusoids[state.step_index];
    if (stats) ++stats->unet_evaluations;
    if (!use_control) return unet_forward(b.config.unet, b.unet, x, t, emb, {}, exec);
    const auto residuals =
        conditioning_scale(controlnet_forward(*p.controlnet, x, t, emb, *prep.condition), p.controlnet_scale);
    return unet_forward(b.config.unet, b.unet, x, t, emb, residuals, exec);
  };

  while (!state.done()) {
    const int t = state.current();
    Tensor eps = eval(latent, t, *prep.cond_emb, prep.cond_kv.get());
    if (!p.conditional_only) {
      const Tensor eps_uncond = eval(latent, t, *prep.uncond_emb, prep.uncond_kv.get());
      eps = cfg_combine(eps_uncond, eps, p.guidance_scale);
    }
    latent = step(latent, eps, state, step_rng);
    if (known_latent != nullptr) {
      const int t_next = state.next();
      const Tensor known = t_next < 0 ? *known_latent : add_noise(*known_latent, noise, t_next, *tables.schedule);
      latent = select_by_mask(*mask, latent, known);
    }
    state.advance();
    if (stats) ++stats->denoise_steps;
  }

  if (stats) {
    stats->unet_loop_ms += elapsed_ms(t0);
    if (watch.tracker) {
      stats->unet_loop_peak_bytes = std::max(stats->unet_loop_peak_bytes, watch.tracker->peak());
      stats->peak_bytes = std::max(stats->peak_bytes, watch.before);
    }
  }
  return latent;
}

Tensor Pipeline::decode(const Prepared& prep, const Tensor& latent, RunStats* stats) const {
  const auto t0 = Clock::now();
  Tensor image = vae_decode(prep.bundle->config.vae, prep.bundle->vae, latent);
  if (stats) {
    stats->vae_decode_ms += elapsed_ms(t0);
    if (auto* tracker = active_tracker()) stats->peak_bytes = std::max(stats->peak_bytes, tracker->peak());
  }
  return image;
}

namespace {

Shape latent_shape(const ModelBundle& b, const PipelineParams& p) {
  const int f = b.config.vae.downsample_factor;
  return {b.config.vae.latent_channels, p.height / f, p.width / f};
}

}  // namespace

Tensor Pipeline::text_to_image(const PipelineParams& p, RunStats* stats) const {
  Prepared prep = prepare(p, stats);
  if (p.controlnet) {
    if (!p.condition_image) throw MissingInput("a ControlNet needs a condition_image");
    prep.condition = condition_from_image(*p.condition_image, p.preprocessor, p.canny);
  }
  Rng noise_rng = Rng(p.seed).split(1);
  Tensor latent = noise_rng.normal_tensor(latent_shape(*bundle_, p));
  const Tensor none;
  latent = denoise(prep, p, std::move(latent), 0, none, nullptr, nullptr, stats);
  return decode(prep, latent, stats);
}

Tensor Pipeline::image_to_image(const PipelineParams& p, RunStats* stats) const {
  if (!p.init_image) throw MissingInput("image_to_image needs an init_image");
  Prepared prep = prepare(p, stats);
  if (p.controlnet) {
    if (!p.condition_image) throw MissingInput("a ControlNet needs a condition_image");
    prep.condition = condition_from_image(*p.condition_image, p.preprocessor, p.canny);
  }
  const Tensor init_latent = vae_encode(bundle_->config.vae, bundle_->vae, *p.init_image);
  const int run = executed_steps(p.strength, p.steps);
  if (run == 0) return decode(prep, init_latent, stats);
  const auto first = static_cast<std::size_t>(p.steps - run);
  Rng noise_rng = Rng(p.seed).split(1);
  const Tensor noise = noise_rng.normal_tensor(init_latent.shape());
  Tensor latent = add_noise(init_latent, noise, prep.tables->timesteps[first], *prep.tables->schedule);
  latent = denoise(prep, p, std::move(latent), first, noise, nullptr, nullptr, stats);
  return decode(prep, latent, stats);
}

Tensor Pipeline::inpaint(const PipelineParams& p, RunStats* stats) const {
  if (!p.init_image) throw MissingInput("inpaint needs an init_image");
  if (!p.mask_image) throw MissingInput("inpaint needs a mask_image");
  Prepared prep = prepare(p, stats);
  if (p.controlnet) {
    if (!p.condition_image) throw MissingInput("a ControlNet needs a condition_image");
    prep.condition = condition_from_image(*p.condition_image, p.preprocessor, p.canny);
  }
  const Tensor init_latent = vae_encode(bundle_->config.vae, bundle_->vae, *p.init_image);
  const Tensor mask = latent_mask(*p.mask_image, bundle_->config.vae.downsample_factor);
  Rng noise_rng = Rng(p.seed).split(1);
  Tensor latent = noise_rng.normal_tensor(init_latent.shape());
  const Tensor noise = latent;
  latent = denoise(prep, p, std::move(latent), 0, noise, &init_latent, &mask, stats);
  const Tensor generated = decode(prep, latent, stats);

  Tensor pixel_mask({1, p.height, p.width});
  for (std::size_t i = 0; i < pixel_mask.numel(); ++i) pixel_mask[i] = p.mask_image->data[i] >= 0.5f ? 1.0f : 0.0f;
  return select_by_mask(pixel_mask, generated, *p.init_image);
}

Tensor Pipeline::edit(const PipelineParams& p, RunStats* stats) const {
  if (!p.init_image) throw MissingInput("edit needs an init_image");
  if (!p.controlnet || p.condition_image) return image_to_image(p, stats);
  PipelineParams with_condition = p;
  with_condition.condition_image = p.init_image;
  return image_to_image(with_condition, stats);
}

Tensor Pipeline::run(TaskKind kind, const PipelineParams& p, RunStats* stats) const {
  switch (kind) {
    case TaskKind::kImageToImage:
      return image_to_image(p, stats);
    case TaskKind::kInpaint:
      return inpaint(p, stats);
    case TaskKind::kEdit:
      return edit(p, stats);
    case TaskKind::kTextToImage:
      break;
  }
  return text_to_image(p, stats);
}

std::vector<Tensor> Pipeline::run_batch(TaskKind kind, const PipelineParams& p, int count) const {
  if (count < 1) throw InvalidArgument("image count must be >= 1");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  PipelineParams each = p;
  for (int i = 0; i < count; ++i) {
    each.seed = p.seed + static_cast<std::uint64_t>(i);
    out.push_back(run(kind, each));
  }
  return out;
}

}  // namespace diffserve

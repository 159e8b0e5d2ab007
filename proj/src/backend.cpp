// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/backend.hpp"

#include <fstream>
#include <random>
#include <thread>

#include "diffserve/errors.hpp"
#include "diffserve/image.hpp"

namespace diffserve {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

Tensor decode_rgb_field(const std::string& field, const std::string& b64, int height, int width) {
  Tensor t;
  try {
    t = from_png_base64(b64);
  } catch (const FormatError& e) {
    throw SchemaError(field + ": " + e.what(), {field});
  }
  if (t.dim(1) != height || t.dim(2) != width) t = resize_bilinear(t, height, width);
  return t;
}

GrayImage decode_gray_field(const std::string& field, const std::string& b64, int height, int width) {
  GrayImage g;
  try {
    g = decode_png_gray(base64_decode(b64));
  } catch (const FormatError& e) {
    throw SchemaError(field + ": " + e.what(), {field});
  }
  if (g.height != height || g.width != width) g = resize_bilinear(g, height, width);
  return g;
}

}  // namespace

PipelineBackend::PipelineBackend(std::shared_ptr<const ModelRegistry> registry, fs::path output_dir,
                                 OptimizationConfig optimizations)
    : registry_(std::move(registry)), output_dir_(std::move(output_dir)), optimizations_(optimizations) {
  if (!registry_) throw InvalidArgument("backend needs a registry");
  std::random_device rd;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%08x%08x", rd(), rd());
  file_prefix_ = buf;
}

std::shared_ptr<const Pipeline> PipelineBackend::pipeline(const std::string& model) {
  const std::lock_guard lock(mutex_);
  auto& slot = pipelines_[model];
  if (!slot) slot = std::make_shared<const Pipeline>(registry_->bundle(model), optimizations_);
  return slot;
}

GenerationJob PipelineBackend::prepare(const GenerationRequest& r) {
  const std::string model = r.model.value_or(registry_->default_model());
  registry_->entry(model);  // NotFound before anything loads
  auto pipe = pipeline(model);

  PipelineParams p;
  p.prompt = r.prompt;
  p.negative_prompt = r.negative_prompt;
  p.steps = r.steps;
  p.width = r.width;
  p.height = r.height;
  p.seed = r.seed.value();
  if (r.guidance_scale) p.guidance_scale = static_cast<float>(*r.guidance_scale);
  if (r.strength) p.strength = static_cast<float>(*r.strength);
  if (r.scheduler) p.scheduler = *r.scheduler;
  if (r.func_name != TaskKind::kTextToImage) {
    p.init_image = decode_rgb_field("init_image", r.init_image.value(), r.height, r.width);
  }
  if (r.func_name == TaskKind::kInpaint) {
    p.mask_image = decode_gray_field("mask_image", r.mask_image.value(), r.height, r.width);
  }
  if (r.condition_image) p.condition_image = decode_rgb_field("condition_image", *r.condition_image, r.height, r.width);
  if (r.lora_name) p.attach_lora(registry_->lora(*r.lora_name), static_cast<float>(r.lora_strength.value_or(1.0)));
  if (r.controlnet_name) {
    p.attach_controlnet(registry_->controlnet(*r.controlnet_name),
                        static_cast<float>(r.controlnet_scale.value_or(1.0)));
    if (!p.condition_image && r.func_name != TaskKind::kEdit) {
      throw MissingInput("condition_image is required with a ControlNet for " + to_string(r.func_name));
    }
  }
  if (r.preprocessor) p.preprocessor = parse_preprocessor(*r.preprocessor);
  if (r.canny_low_threshold) p.canny.low_threshold = *r.canny_low_threshold;
  if (r.canny_high_threshold) p.canny.high_threshold = *r.canny_high_threshold;
  pipe->validate(p);

  const int count = r.image_num;
  const TaskKind kind = r.func_name;
  const bool use_base64 = r.use_base64;
  return [this, pipe, p = std::move(p), count, kind, use_base64]() {
    GenerationResult result;
    for (const Tensor& image : pipe->run_batch(kind, p, count)) {
      const auto png = encode_png(image);
      if (use_base64) {
        result.images.push_back(base64_encode(png));
        continue;
      }
      const std::string name = file_prefix_ + "-" + std::to_string(file_counter_++) + ".png";
      fs::create_directories(output_dir_);
      std::ofstream out(output_dir_ / name, std::ios::binary);
      out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
      if (!out) throw Error("could not write " + (output_dir_ / name).string());
      result.images.push_back(name);
    }
    result.success = true;
    return result;
  };
}

json PipelineBackend::models() { return json(registry_->entries()); }

// ---------------------------------------------------------------------------

StubBackend::StubBackend(std::chrono::milliseconds latency, std::string name)
    : latency_(latency), name_(std::move(name)) {}

GenerationJob StubBackend::prepare(const GenerationRequest& r) {
  if (r.model && *r.model != name_) throw NotFound("unknown model '" + *r.model + "' (known: " + name_ + ")");
  const int count = r.image_num, height = r.height, width = r.width;
  return [this, count, height, width]() {
    std::this_thread::sleep_for(latency_);
    GenerationResult result;
    const std::string png = to_png_base64(Tensor({3, height, width}, 0.0f));
    result.images.assign(static_cast<std::size_t>(count), png);
    result.success = true;
    ++completed_;
    return result;
  };
}

json StubBackend::models() {
  return json::array({json(RegistryEntry{name_, "Stub", 64, 64, 0, {}})});
}

}  // namespace diffserve

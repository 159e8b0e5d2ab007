// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/registry.hpp"

#include <fstream>

#include "diffserve/errors.hpp"

namespace diffserve {

namespace fs = std::filesystem;
using json = nlohmann::json;

void to_json(json& j, const RegistryEntry& e) {
  j = json{{"model_name", e.model_name},       {"domain_tag", e.domain_tag},   {"default_width", e.default_width},
           {"default_height", e.default_height}, {"param_count", e.param_count}, {"adapters", e.adapters}};
}

void from_json(const json& j, RegistryEntry& e) {
  j.at("model_name").get_to(e.model_name);
  j.at("domain_tag").get_to(e.domain_tag);
  j.at("default_width").get_to(e.default_width);
  j.at("default_height").get_to(e.default_height);
  j.at("param_count").get_to(e.param_count);
  e.adapters = j.value("adapters", std::vector<std::string>{});
}

namespace {

template <class Map>
std::string known_names(const Map& m) {
  std::string out;
  for (const auto& [name, slot] : m) out += (out.empty() ? "" : ", ") + name;
  return out.empty() ? "none" : out;
}

void check_entry(const RegistryEntry& e, int factor) {
  if (e.model_name.empty()) throw FormatError("registry entry without a model name");
  if (e.default_width <= 0 || e.default_height <= 0 || e.default_width % factor != 0 ||
      e.default_height % factor != 0) {
    throw FormatError("model '" + e.model_name + "' default size " + std::to_string(e.default_width) + "x" +
                      std::to_string(e.default_height) + " is not a multiple of " + std::to_string(factor));
  }
}

}  // namespace

std::unique_ptr<ModelRegistry> ModelRegistry::load(const fs::path& dir) {
  const fs::path index = dir / "registry.json";
  std::ifstream in(index);
  if (!in) throw NotFound("no registry at " + index.string());
  auto reg = std::make_unique<ModelRegistry>();
  try {
    const json j = json::parse(in);
    if (j.at("format_version").get<int>() != kRegistryFormatVersion) {
      throw FormatError("unsupported registry format_version " + j.at("format_version").dump());
    }
    for (const auto& m : j.at("models")) {
      ModelSlot slot{m.get<RegistryEntry>(), dir / m.at("path").get<std::string>(), nullptr};
      // The VAE factor is checked against the real config once the bundle loads.
      check_entry(slot.entry, 8);
      const std::string name = slot.entry.model_name;
      if (!reg->models_.emplace(name, std::move(slot)).second) throw FormatError("duplicate model '" + name + "'");
      reg->order_.push_back(name);
    }
    for (const auto& a : j.value("loras", json::array())) {
      reg->loras_[a.at("name").get<std::string>()] = {dir / a.at("path").get<std::string>(), nullptr};
    }
    for (const auto& a : j.value("controlnets", json::array())) {
      reg->controlnets_[a.at("name").get<std::string>()] = {dir / a.at("path").get<std::string>(), nullptr};
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed registry " + index.string() + ": " + e.what());
  }
  return reg;
}

void ModelRegistry::add_model(RegistryEntry entry, BundlePtr bundle) {
  if (!bundle) throw InvalidArgument("registry model needs a bundle");
  entry.param_count = bundle->param_count();
  check_entry(entry, bundle->config.vae.downsample_factor);
  const std::lock_guard lock(mutex_);
  const std::string name = entry.model_name;
  if (models_.count(name) == 0) order_.push_back(name);
  models_[name] = ModelSlot{std::move(entry), {}, std::move(bundle)};
}

void ModelRegistry::add_lora(LoraPtr adapter) {
  const std::lock_guard lock(mutex_);
  loras_[adapter->name] = {{}, std::move(adapter)};
}

void ModelRegistry::add_controlnet(ControlNetPtr adapter) {
  const std::lock_guard lock(mutex_);
  controlnets_[adapter->name] = {{}, std::move(adapter)};
}

std::vector<RegistryEntry> ModelRegistry::entries() const {
  const std::lock_guard lock(mutex_);
  std::vector<RegistryEntry> out;
  for (const auto& name : order_) out.push_back(models_.at(name).entry);
  return out;
}

RegistryEntry ModelRegistry::entry(const std::string& model_name) const {
  const std::lock_guard lock(mutex_);
  const auto it = models_.find(model_name);
  if (it == models_.end()) throw NotFound("unknown model '" + model_name + "' (known: " + known_names(models_) + ")");
  return it->second.entry;
}

std::string ModelRegistry::default_model() const {
  const std::lock_guard lock(mutex_);
  if (order_.empty()) throw NotFound("the registry holds no models");
  return order_.front();
}

BundlePtr ModelRegistry::bundle(const std::string& model_name) const {
  const std::lock_guard lock(mutex_);
  const auto it = models_.find(model_name);
  if (it == models_.end()) throw NotFound("unknown model '" + model_name + "' (known: " + known_names(models_) + ")");
  ModelSlot& slot = it->second;
  if (!slot.bundle) {
    BundlePtr loaded = load_bundle(slot.path);
    check_entry(slot.entry, loaded->config.vae.downsample_factor);
    if (loaded->param_count() != slot.entry.param_count) {
      throw FormatError("model '" + model_name + "' has " + std::to_string(loaded->param_count()) +
                        " parameters, registry says " + std::to_string(slot.entry.param_count));
    }
    slot.bundle = std::move(loaded);
  }
  return slot.bundle;
}

LoraPtr ModelRegistry::lora(const std::string& name) const {
  const std::lock_guard lock(mutex_);
  const auto it = loras_.find(name);
  if (it == loras_.end()) throw NotFound("unknown LoRA '" + name + "' (known: " + known_names(loras_) + ")");
  if (!it->second.adapter) it->second.adapter = std::make_shared<const LoraAdapter>(load_lora(it->second.path));
  return it->second.adapter;
}

ControlNetPtr ModelRegistry::controlnet(const std::string& name) const {
  const std::lock_guard lock(mutex_);
  const auto it = controlnets_.find(name);
  if (it == controlnets_.end()) {
    throw NotFound("unknown ControlNet '" + name + "' (known: " + known_names(controlnets_) + ")");
  }
  if (!it->second.adapter) {
    it->second.adapter = std::make_shared<const ControlNetAdapter>(load_controlnet(it->second.path));
  }
  return it->second.adapter;
}

// ---------------------------------------------------------------------------

namespace {

// Stand-in for trained adapter weights: small random values in the
// otherwise zero output convolutions.
void perturb_zero_convs(ControlNetAdapter& cn, Rng& rng, float std) {
  for (int i = 0; i < cn.config.unet.injection_points(); ++i) {
    for (auto& v : cn.weights.get_mutable("zero_convs." + std::to_string(i) + ".weight").data()) {
      v = rng.truncated_normal(std);
    }
  }
}

}  // namespace

fs::path init_toy_models(const fs::path& dir, std::uint64_t seed) {
  fs::create_directories(dir);
  struct Model {
    const char* name;
    const char* domain;
    int width, height;
    std::uint64_t seed_offset;
  };
  // Both general models share an architecture; they differ in default size.
  const Model models[] = {
      {"general-large-zh-toy", "General purpose", 64, 64, 0},
      {"general-xlarge-zh-toy", "General purpose", 96, 96, 1},
      {"anime-large-zh-toy", "Anime", 64, 64, 2},
  };
  const std::vector<std::string> adapter_names{"poem-lora", "canny-controlnet", "depth-controlnet"};

  json index{{"format_version", kRegistryFormatVersion},
             {"models", json::array()},
             {"loras", json::array()},
             {"controlnets", json::array()}};
  std::shared_ptr<ModelBundle> first;
  for (const auto& m : models) {
    auto bundle = init_seeded(BundleConfig{}, seed + m.seed_offset);
    save_bundle(*bundle, dir / m.name);
    RegistryEntry e{m.name, m.domain, m.width, m.height, bundle->param_count(), adapter_names};
    json row = e;
    row["path"] = m.name;
    index["models"].push_back(row);
    if (!first) first = bundle;
  }

  Rng rng = Rng(seed).split(100);
  const LoraAdapter lora = init_lora("poem-lora", first->config.unet, rng, 4, 4.0f, false);
  index["loras"].push_back({{"name", lora.name}, {"path", save_lora(lora, dir / "adapters").lexically_relative(dir).string()}});
  for (const char* name : {"canny-controlnet", "depth-controlnet"}) {
    ControlNetAdapter cn = init_controlnet(name, *first, 1, rng);
    perturb_zero_convs(cn, rng, 0.02f);
    index["controlnets"].push_back(
        {{"name", cn.name}, {"path", save_controlnet(cn, dir / "adapters").lexically_relative(dir).string()}});
  }

  const fs::path path = dir / "registry.json";
  std::ofstream(path) << index.dump(2) << "\n";
  return path;
}

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include "diffserve/errors.hpp"
#include "diffserve/models.hpp"

namespace diffserve {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t InstanceId::next() noexcept {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

std::shared_ptr<ModelBundle> init_seeded(const BundleConfig& config, std::uint64_t seed) {
  if (config.unet.in_channels != config.vae.latent_channels) {
    throw InvalidArgument("U-Net in_channels (" + std::to_string(config.unet.in_channels) +
                          ") must equal VAE latent_channels (" + std::to_string(config.vae.latent_channels) + ")");
  }
  if (config.unet.cross_attn_dim != config.text.embed_dim) {
    throw InvalidArgument("U-Net cross_attn_dim must equal the text encoder embed_dim");
  }
  auto bundle = std::make_shared<ModelBundle>();
  bundle->config = config;
  const Rng root(seed);
  Rng text_rng = root.split(1), unet_rng = root.split(2), vae_rng = root.split(3);
  bundle->text_encoder = init_weights(text_encoder_params(config.text), text_rng);
  bundle->unet = init_weights(unet_params(config.unet), unet_rng);
  bundle->vae = init_weights(vae_params(config.vae), vae_rng);
  return bundle;
}

fs::path save_bundle(const ModelBundle& bundle, const fs::path& dir) {
  save_weight_file(dir, "text_encoder", "text_encoder", json(bundle.config.text), bundle.text_encoder);
  save_weight_file(dir, "unet", "unet", json(bundle.config.unet), bundle.unet);
  save_weight_file(dir, "vae", "vae", json(bundle.config.vae), bundle.vae);
  const json index = {{"format_version", kWeightFormatVersion},
                      {"components",
                       {{"text_encoder", "text_encoder.json"}, {"unet", "unet.json"}, {"vae", "vae.json"}}}};
  const fs::path path = dir / "bundle.json";
  std::ofstream out(path, std::ios::trunc);
  out << index.dump(2) << '\n';
  if (!out) throw FormatError("failed writing " + path.string());
  return path;
}

std::shared_ptr<ModelBundle> load_bundle(const fs::path& path) {
  const fs::path index_path = fs::is_directory(path) ? path / "bundle.json" : path;
  std::ifstream in(index_path);
  if (!in) throw FormatError("cannot open bundle index " + index_path.string());
  json index;
  try {
    index = json::parse(in);
    if (index.at("format_version").get<int>() != kWeightFormatVersion) {
      throw FormatError("unknown bundle format_version in " + index_path.string());
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed bundle index " + index_path.string() + ": " + e.what());
  }
  const fs::path dir = index_path.parent_path();
  auto component = [&](const char* key, const char* kind) {
    WeightFile file = load_weight_file(dir / index.at("components").at(key).get<std::string>());
    if (file.model_kind != kind) {
      throw FormatError(std::string("component '") + key + "' has model_kind '" + file.model_kind + "'");
    }
    return file;
  };
  auto bundle = std::make_shared<ModelBundle>();
  try {
    WeightFile text = component("text_encoder", "text_encoder");
    WeightFile unet = component("unet", "unet");
    WeightFile vae = component("vae", "vae");
    bundle->config.text = text.config.get<TextEncoderConfig>();
    bundle->config.unet = unet.config.get<UNetConfig>();
    bundle->config.vae = vae.config.get<VAEConfig>();
    check_weights(text_encoder_params(bundle->config.text), text.weights, "text_encoder");
    check_weights(unet_params(bundle->config.unet), unet.weights, "unet");
    check_weights(vae_params(bundle->config.vae), vae.weights, "vae");
    bundle->text_encoder = std::move(text.weights);
    bundle->unet = std::move(unet.weights);
    bundle->vae = std::move(vae.weights);
  } catch (const json::exception& e) {
    throw FormatError("malformed bundle " + index_path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid config in bundle " + index_path.string() + ": " + e.what());
  }
  return bundle;
}

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffserve/adapters.hpp"
#include "diffserve/models.hpp"

namespace diffserve {

inline constexpr int kRegistryFormatVersion = 1;

struct RegistryEntry {
  std::string model_name;
  std::string domain_tag;
  int default_width = 64;
  int default_height = 64;
  std::size_t param_count = 0;
  /// Names of compatible LoRA and ControlNet adapters.
  std::vector<std::string> adapters;

  bool operator==(const RegistryEntry&) const = default;
};

void to_json(nlohmann::json& j, const RegistryEntry& e);
void from_json(const nlohmann::json& j, RegistryEntry& e);

/// Models and adapters known to a server. Weights load lazily on first use
/// and are then shared; lookups are thread-safe.
class ModelRegistry {
 public:
  ModelRegistry() = default;

  /// Reads `<dir>/registry.json`.
  static std::unique_ptr<ModelRegistry> load(const std::filesystem::path& dir);

  /// In-memory registration. The entry's param_count is filled from the bundle.
  void add_model(RegistryEntry entry, BundlePtr bundle);
  void add_lora(LoraPtr adapter);
  void add_controlnet(ControlNetPtr adapter);

  std::vector<RegistryEntry> entries() const;
  /// Throws NotFound listing the known names.
  RegistryEntry entry(const std::string& model_name) const;
  /// First registered model.
  std::string default_model() const;

  BundlePtr bundle(const std::string& model_name) const;
  LoraPtr lora(const std::string& name) const;
  ControlNetPtr controlnet(const std::string& name) const;

 private:
  struct ModelSlot {
    RegistryEntry entry;
    std::filesystem::path path;
    BundlePtr bundle;
  };
  template <class T>
  struct AdapterSlot {
    std::filesystem::path path;
    std::shared_ptr<const T> adapter;
  };

  mutable std::mutex mutex_;
  std::vector<std::string> order_;
  mutable std::map<std::string, ModelSlot> models_;
  mutable std::map<std::string, AdapterSlot<LoraAdapter>> loras_;
  mutable std::map<std::string, AdapterSlot<ControlNetAdapter>> controlnets_;
};

/// Writes the toy model zoo: bundles, adapters and registry.json under `dir`.
/// Returns the registry path.
std::filesystem::path init_toy_models(const std::filesystem::path& dir, std::uint64_t seed = 42);

}  // namespace diffserve

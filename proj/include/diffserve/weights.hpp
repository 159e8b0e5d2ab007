// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffserve/tensor.hpp"

namespace diffserve {

/// Named tensors in insertion order. Insertion order is the on-disk order.
class WeightStore {
 public:
  void add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  /// Throws NotFound naming the weight.
  const Tensor& get(std::string_view name) const;
  Tensor& get_mutable(std::string_view name);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::size_t param_count() const noexcept;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Manifest + sidecar blob. The manifest is JSON:
///
///   { "format_version": 1, "model_kind": "unet", "config": {...},
///     "blob": "unet.bin", "blob_checksum": "crc32:0a1b2c3d",
///     "tensors": [ {"name": "...", "shape": [..], "byte_offset": 0}, ... ] }
///
/// The blob is every tensor's float32 values, little-endian, packed back to
/// back in manifest order.
inline constexpr int kWeightFormatVersion = 1;

struct WeightFile {
  std::string model_kind;
  nlohmann::json config;
  WeightStore weights;
};

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`; returns the manifest path.
std::filesystem::path save_weight_file(const std::filesystem::path& dir, const std::string& stem,
                                       const std::string& model_kind, const nlohmann::json& config,
                                       const WeightStore& weights);

/// Reads and verifies a manifest and its blob. Throws FormatError on version,
/// checksum, offset or size violations.
WeightFile load_weight_file(const std::filesystem::path& manifest_path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffserve/pipeline.hpp"

namespace diffserve {

inline const std::vector<std::string> kBenchStages{"tokenize", "text_encode", "unet_loop", "vae_decode",
                                                   "png_encode"};

struct StageSummary {
  double mean_ms = 0;
  double std_ms = 0;
};

struct BenchmarkResult {
  OptimizationConfig config;
  /// Description of (bundle, params); two results are comparable when equal.
  nlohmann::json workload;
  int repeats = 0;
  /// Keyed by kBenchStages plus "total".
  std::map<std::string, StageSummary> per_stage;
  double mean_ms = 0;
  double std_ms = 0;
  /// Tracked tensor-allocation high-water mark over the measured runs.
  std::size_t peak_alloc_bytes = 0;
  std::size_t unet_loop_peak_bytes = 0;
  /// CRC-32 of the PNG produced by every measured run (they must agree).
  std::uint32_t image_crc = 0;
};

void to_json(nlohmann::json& j, const StageSummary& s);
void to_json(nlohmann::json& j, const BenchmarkResult& r);

/// Workload record used for comparability checks.
nlohmann::json describe_workload(const ModelBundle& bundle, const PipelineParams& params);

/// Runs text-to-image `repeats` + 1 times on one pipeline; the first run is
/// a warm-up and is not measured. Throws InvalidArgument when repeats < 1 or
/// when measured runs disagree on the image.
BenchmarkResult run_benchmark(const BundlePtr& bundle, const PipelineParams& params,
                              const OptimizationConfig& config, int repeats = 20);

struct ComparisonReport {
  std::string table;
  nlohmann::json data;
};

/// Two-column time / peak-allocation table with speedup and memory ratios.
/// Throws InvalidArgument when the workloads differ.
ComparisonReport compare_report(const BenchmarkResult& baseline, const BenchmarkResult& optimized);

/// Writes `<out>.txt` and `<out>.json`.
void write_report(const ComparisonReport& report, const std::filesystem::path& out);

/// The reference toy workload: 25 steps, 64x64, a LoRA attached, fixed prompt.
PipelineParams reference_workload(const ModelBundle& bundle);

/// Contents of a `bench run --config` file:
///
///   {"models_dir": "...", "model": "...",   // or "bundle_seed": 42
///    "workload": {"prompt": ..., "negative_prompt": ..., "steps": ...,
///                 "width": ..., "height": ..., "seed": ...,
///                 "guidance_scale": ..., "lora_strength": ..., "lora": bool},
///    "baseline": OptimizationConfig, "optimized": OptimizationConfig}
///
/// Every key is optional; the defaults give the reference workload on a
/// seeded toy bundle, all optimizations off versus all on.
struct BenchConfig {
  std::optional<std::filesystem::path> models_dir;
  std::string model;
  std::uint64_t bundle_seed = 42;
  nlohmann::json workload = nlohmann::json::object();
  OptimizationConfig baseline;
  OptimizationConfig optimized = OptimizationConfig::all_on();
};

/// Throws FormatError on unknown keys or wrong types.
BenchConfig parse_bench_config(const nlohmann::json& j);
BenchConfig load_bench_config(const std::filesystem::path& path);

/// The reference workload with the config's overrides applied.
PipelineParams bench_workload(const ModelBundle& bundle, const nlohmann::json& overrides);

/// Loads the bundle, runs both configurations and compares them.
ComparisonReport run_comparison(const BenchConfig& config, int repeats);

}  // namespace diffserve

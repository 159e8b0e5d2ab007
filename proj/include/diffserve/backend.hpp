// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>

#include <nlohmann/json.hpp>

#include "diffserve/api.hpp"
#include "diffserve/registry.hpp"

namespace diffserve {

/// Produces the images of a result; task_id, seed and elapsed_ms are filled
/// in by the service.
using GenerationJob = std::function<GenerationResult()>;

/// What the HTTP service runs requests against.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;

  /// Resolves names and decodes inputs before the request is queued, so
  /// 4xx errors surface at submission. `request.seed` is always set.
  virtual GenerationJob prepare(const GenerationRequest& request) = 0;
  /// Registry entries as a JSON array.
  virtual nlohmann::json models() = 0;
  /// Extra fields merged into GET /health.
  virtual nlohmann::json status() { return nlohmann::json::object(); }
};

/// Runs requests on the diffusion pipelines of a model registry.
class PipelineBackend : public GenerationBackend {
 public:
  PipelineBackend(std::shared_ptr<const ModelRegistry> registry, std::filesystem::path output_dir,
                  OptimizationConfig optimizations = OptimizationConfig::all_on());

  GenerationJob prepare(const GenerationRequest& request) override;
  nlohmann::json models() override;

  const std::filesystem::path& output_dir() const noexcept { return output_dir_; }

 private:
  std::shared_ptr<const Pipeline> pipeline(const std::string& model);

  std::shared_ptr<const ModelRegistry> registry_;
  std::filesystem::path output_dir_;
  OptimizationConfig optimizations_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const Pipeline>> pipelines_;
  std::atomic<std::uint64_t> file_counter_{0};
  std::string file_prefix_;
};

/// Sleeps a fixed latency and returns flat gray images of the requested
/// size. Stands in for a real pipeline in capacity and cluster tests.
class StubBackend : public GenerationBackend {
 public:
  explicit StubBackend(std::chrono::milliseconds latency, std::string name = "stub");

  GenerationJob prepare(const GenerationRequest& request) override;
  nlohmann::json models() override;

  std::uint64_t completed() const noexcept { return completed_.load(); }

 private:
  std::chrono::milliseconds latency_;
  std::string name_;
  std::atomic<std::uint64_t> completed_{0};
};

}  // namespace diffserve

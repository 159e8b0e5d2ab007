// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

// Wire types of the generation service and their strict JSON schema.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffserve/errors.hpp"
#include "diffserve/pipeline.hpp"

namespace diffserve {

/// Schema violation; `fields` names every offending field.
class SchemaError : public InvalidArgument {
 public:
  SchemaError(const std::string& message, std::vector<std::string> fields)
      : InvalidArgument(message), fields_(std::move(fields)) {}
  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  std::vector<std::string> fields_;
};

struct RequestLimits {
  int max_image_num = 4;
  int min_side = 8;
  int max_side = 512;
};

struct GenerationRequest {
  std::string task_id;
  std::string prompt;
  std::string negative_prompt;
  TaskKind func_name = TaskKind::kTextToImage;
  int steps = 25;
  int image_num = 1;
  int width = 64;
  int height = 64;
  bool use_base64 = true;
  /// Drawn by the server when absent.
  std::optional<std::uint64_t> seed;

  /// Base64 PNGs.
  std::optional<std::string> init_image;
  std::optional<std::string> mask_image;
  std::optional<std::string> condition_image;

  /// Registry model; the registry's first model when absent.
  std::optional<std::string> model;
  std::optional<std::string> lora_name;
  std::optional<double> lora_strength;
  std::optional<std::string> controlnet_name;
  std::optional<double> controlnet_scale;
  std::optional<std::string> preprocessor;
  std::optional<double> canny_low_threshold;
  std::optional<double> canny_high_threshold;
  std::optional<std::string> scheduler;
  std::optional<double> guidance_scale;
  std::optional<double> strength;
};

/// Field names accepted in a generation request body.
const std::vector<std::string>& generation_request_fields();

/// Parses and validates a request body. Throws SchemaError (unknown or
/// missing fields, wrong types, out-of-range values) and MissingInput when
/// the function needs an image that is absent. A t2i request may carry an
/// init_image; it is ignored.
GenerationRequest parse_generation_request(const nlohmann::json& body, const RequestLimits& limits = {});

/// Only present fields are written; round-trips through parse.
void to_json(nlohmann::json& j, const GenerationRequest& r);

struct GenerationResult {
  /// The client's task_id, unmodified.
  std::string task_id;
  bool success = false;
  /// Base64 PNGs, or paths relative to the server's output directory.
  std::vector<std::string> images;
  std::uint64_t seed = 0;
  double elapsed_ms = 0;
  /// Present exactly when success is false.
  std::optional<std::string> error;
};

void to_json(nlohmann::json& j, const GenerationResult& r);
void from_json(const nlohmann::json& j, GenerationResult& r);

enum class TaskStatus { kQueued, kRunning, kDone, kFailed };
std::string to_string(TaskStatus s);
TaskStatus parse_task_status(const std::string& name);

struct TaskRecord {
  /// Server-generated id used by GET /tasks/{id}.
  std::string id;
  std::string client_task_id;
  TaskStatus status = TaskStatus::kQueued;
  /// Unix seconds.
  double submitted_at = 0;
  std::optional<double> finished_at;
  std::optional<GenerationResult> result;
};

void to_json(nlohmann::json& j, const TaskRecord& r);
void from_json(const nlohmann::json& j, TaskRecord& r);

/// Request body of POST /preprocess.
struct PreprocessRequest {
  std::string image;  // base64 PNG
  Preprocessor preprocessor = Preprocessor::kCanny;
  CannyOptions canny;
};

PreprocessRequest parse_preprocess_request(const nlohmann::json& body);

/// HTTP status for an exception escaping a handler.
int http_status_for(const std::exception& e);
/// Rethrows a worker's error response as the matching exception type.
[[noreturn]] void throw_for_status(int status, const std::string& message);

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/api.hpp"

#include <cmath>
#include <limits>

namespace diffserve {

using json = nlohmann::json;

namespace {

enum class Kind { kString, kInt, kNumber, kBool, kSeed };

struct FieldSpec {
  const char* name;
  Kind kind;
  bool required;
};

const FieldSpec kRequestFields[] = {
    {"task_id", Kind::kString, true},
    {"prompt", Kind::kString, true},
    {"negative_prompt", Kind::kString, false},
    {"func_name", Kind::kString, true},
    {"steps", Kind::kInt, true},
    {"image_num", Kind::kInt, true},
    {"width", Kind::kInt, true},
    {"height", Kind::kInt, true},
    {"use_base64", Kind::kBool, true},
    {"seed", Kind::kSeed, false},
    {"init_image", Kind::kString, false},
    {"mask_image", Kind::kString, false},
    {"condition_image", Kind::kString, false},
    {"model", Kind::kString, false},
    {"lora_name", Kind::kString, false},
    {"lora_strength", Kind::kNumber, false},
    {"controlnet_name", Kind::kString, false},
    {"controlnet_scale", Kind::kNumber, false},
    {"preprocessor", Kind::kString, false},
    {"canny_low_threshold", Kind::kNumber, false},
    {"canny_high_threshold", Kind::kNumber, false},
    {"scheduler", Kind::kString, false},
    {"guidance_scale", Kind::kNumber, false},
    {"strength", Kind::kNumber, false},
};

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kString: return "a string";
    case Kind::kInt: return "an integer";
    case Kind::kNumber: return "a finite number";
    case Kind::kBool: return "a boolean";
    case Kind::kSeed: return "a non-negative integer";
  }
  return "?";
}

bool has_kind(const json& v, Kind k) {
  switch (k) {
    case Kind::kString: return v.is_string();
    case Kind::kInt:
      return v.is_number_integer() && v.get<std::int64_t>() >= std::numeric_limits<int>::min() &&
             v.get<std::int64_t>() <= std::numeric_limits<int>::max();
    case Kind::kNumber: return v.is_number() && std::isfinite(v.get<double>());
    case Kind::kBool: return v.is_boolean();
    case Kind::kSeed: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }
  return false;
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ", ") + x;
  return out;
}

// Accumulates field problems so one response names all of them.
class Problems {
 public:
  void add(const std::string& field, const std::string& message) {
    fields_.push_back(field);
    messages_.push_back(field + ": " + message);
  }
  void raise_if_any() const {
    if (!fields_.empty()) throw SchemaError("invalid request: " + join(messages_), fields_);
  }

 private:
  std::vector<std::string> fields_;
  std::vector<std::string> messages_;
};

void check_object(const json& body, const FieldSpec* begin, const FieldSpec* end) {
  if (!body.is_object()) throw SchemaError("request body must be a JSON object", {});
  std::vector<std::string> unknown;
  for (const auto& [key, value] : body.items()) {
    bool known = false;
    for (auto* f = begin; f != end; ++f) known = known || key == f->name;
    if (!known) unknown.push_back(key);
  }
  if (!unknown.empty()) throw SchemaError("unknown fields: " + join(unknown), unknown);

  Problems problems;
  for (auto* f = begin; f != end; ++f) {
    const auto it = body.find(f->name);
    if (it == body.end() || it->is_null()) {
      if (f->required) problems.add(f->name, "is required");
    } else if (!has_kind(*it, f->kind)) {
      problems.add(f->name, std::string("must be ") + kind_name(f->kind));
    }
  }
  problems.raise_if_any();
}

template <class T>
void read_optional(const json& body, const char* name, std::optional<T>& out) {
  const auto it = body.find(name);
  if (it != body.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace

const std::vector<std::string>& generation_request_fields() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : kRequestFields) out.emplace_back(f.name);
    return out;
  }();
  return names;
}

GenerationRequest parse_generation_request(const json& body, const RequestLimits& limits) {
  check_object(body, std::begin(kRequestFields), std::end(kRequestFields));

  GenerationRequest r;
  Problems problems;
  r.task_id = body.at("task_id").get<std::string>();
  r.prompt = body.at("prompt").get<std::string>();
  r.negative_prompt = body.value("negative_prompt", std::string{});
  try {
    r.func_name = parse_task_kind(body.at("func_name").get<std::string>());
  } catch (const InvalidArgument&) {
    problems.add("func_name", "must be one of t2i, i2i, inpaint, edit");
  }
  r.steps = body.at("steps").get<int>();
  r.image_num = body.at("image_num").get<int>();
  r.width = body.at("width").get<int>();
  r.height = body.at("height").get<int>();
  r.use_base64 = body.at("use_base64").get<bool>();
  read_optional(body, "seed", r.seed);
  read_optional(body, "init_image", r.init_image);
  read_optional(body, "mask_image", r.mask_image);
  read_optional(body, "condition_image", r.condition_image);
  read_optional(body, "model", r.model);
  read_optional(body, "lora_name", r.lora_name);
  read_optional(body, "lora_strength", r.lora_strength);
  read_optional(body, "controlnet_name", r.controlnet_name);
  read_optional(body, "controlnet_scale", r.controlnet_scale);
  read_optional(body, "preprocessor", r.preprocessor);
  read_optional(body, "canny_low_threshold", r.canny_low_threshold);
  read_optional(body, "canny_high_threshold", r.canny_high_threshold);
  read_optional(body, "scheduler", r.scheduler);
  read_optional(body, "guidance_scale", r.guidance_scale);
  read_optional(body, "strength", r.strength);

  if (r.steps < 1) problems.add("steps", "must be >= 1");
  if (r.image_num < 1 || r.image_num > limits.max_image_num) {
    problems.add("image_num", "must be in [1, " + std::to_string(limits.max_image_num) + "]");
  }
  for (const auto& [name, side] : {std::pair{"width", r.width}, std::pair{"height", r.height}}) {
    if (side < limits.min_side || side > limits.max_side || side % 8 != 0) {
      problems.add(name, "must be a multiple of 8 in [" + std::to_string(limits.min_side) + ", " +
                             std::to_string(limits.max_side) + "]");
    }
  }
  if (r.lora_strength && (*r.lora_strength < 0 || *r.lora_strength > 1)) {
    problems.add("lora_strength", "must be in [0, 1]");
  }
  if (r.controlnet_scale && *r.controlnet_scale < 0) problems.add("controlnet_scale", "must be >= 0");
  if (r.strength && (*r.strength < 0 || *r.strength > 1)) problems.add("strength", "must be in [0, 1]");
  if (r.preprocessor) {
    try {
      parse_preprocessor(*r.preprocessor);
    } catch (const InvalidArgument&) {
      problems.add("preprocessor", "must be one of none, canny, depth");
    }
  }
  const double low = r.canny_low_threshold.value_or(CannyOptions{}.low_threshold);
  const double high = r.canny_high_threshold.value_or(CannyOptions{}.high_threshold);
  if (!(low >= 0 && low < high && high <= 1)) {
    problems.add(r.canny_low_threshold ? "canny_low_threshold" : "canny_high_threshold",
                 "thresholds need 0 <= low < high <= 1");
  }
  problems.raise_if_any();

  const bool needs_init = r.func_name != TaskKind::kTextToImage;
  if (needs_init && !r.init_image) throw MissingInput("init_image is required for " + to_string(r.func_name));
  if (r.func_name == TaskKind::kInpaint && !r.mask_image) throw MissingInput("mask_image is required for inpaint");
  return r;
}

void to_json(json& j, const GenerationRequest& r) {
  j = json{{"task_id", r.task_id},     {"prompt", r.prompt},   {"func_name", to_string(r.func_name)},
           {"steps", r.steps},         {"image_num", r.image_num}, {"width", r.width},
           {"height", r.height},       {"use_base64", r.use_base64}};
  if (!r.negative_prompt.empty()) j["negative_prompt"] = r.negative_prompt;
  const auto put = [&j](const char* name, const auto& v) {
    if (v) j[name] = *v;
  };
  put("seed", r.seed);
  put("init_image", r.init_image);
  put("mask_image", r.mask_image);
  put("condition_image", r.condition_image);
  put("model", r.model);
  put("lora_name", r.lora_name);
  put("lora_strength", r.lora_strength);
  put("controlnet_name", r.controlnet_name);
  put("controlnet_scale", r.controlnet_scale);
  put("preprocessor", r.preprocessor);
  put("canny_low_threshold", r.canny_low_threshold);
  put("canny_high_threshold", r.canny_high_threshold);
  put("scheduler", r.scheduler);
  put("guidance_scale", r.guidance_scale);
  put("strength", r.strength);
}

void to_json(json& j, const GenerationResult& r) {
  j = json{{"task_id", r.task_id},
           {"success", r.success},
           {"images", r.images},
           {"seed", r.seed},
           {"elapsed_ms", r.elapsed_ms}};
  if (r.error) j["error"] = *r.error;
}

void from_json(const json& j, GenerationResult& r) {
  j.at("task_id").get_to(r.task_id);
  j.at("success").get_to(r.success);
  r.images = j.value("images", std::vector<std::string>{});
  r.seed = j.value("seed", std::uint64_t{0});
  r.elapsed_ms = j.value("elapsed_ms", 0.0);
  r.error.reset();
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
}

std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::kQueued: return "queued";
    case TaskStatus::kRunning: return "running";
    case TaskStatus::kDone: return "done";
    case TaskStatus::kFailed: return "failed";
  }
  return "?";
}

TaskStatus parse_task_status(const std::string& name) {
  for (auto s : {TaskStatus::kQueued, TaskStatus::kRunning, TaskStatus::kDone, TaskStatus::kFailed}) {
    if (to_string(s) == name) return s;
  }
  throw InvalidArgument("unknown task status '" + name + "'");
}

void to_json(json& j, const TaskRecord& r) {
  j = json{{"task_id", r.id},
           {"client_task_id", r.client_task_id},
           {"status", to_string(r.status)},
           {"submitted_at", r.submitted_at},
           {"finished_at", r.finished_at ? json(*r.finished_at) : json(nullptr)}};
  j["result"] = r.result ? json(*r.result) : json(nullptr);
}

void from_json(const json& j, TaskRecord& r) {
  j.at("task_id").get_to(r.id);
  r.client_task_id = j.value("client_task_id", std::string{});
  r.status = parse_task_status(j.at("status").get<std::string>());
  r.submitted_at = j.value("submitted_at", 0.0);
  r.finished_at.reset();
  if (j.contains("finished_at") && !j["finished_at"].is_null()) r.finished_at = j["finished_at"].get<double>();
  r.result.reset();
  if (j.contains("result") && !j["result"].is_null()) r.result = j["result"].get<GenerationResult>();
}

PreprocessRequest parse_preprocess_request(const json& body) {
  static const FieldSpec fields[] = {
      {"image", Kind::kString, true},
      {"preprocessor", Kind::kString, true},
      {"low_threshold", Kind::kNumber, false},
      {"high_threshold", Kind::kNumber, false},
      {"sigma", Kind::kNumber, false},
  };
  check_object(body, std::begin(fields), std::end(fields));
  PreprocessRequest r;
  r.image = body.at("image").get<std::string>();
  Problems problems;
  try {
    r.preprocessor = parse_preprocessor(body.at("preprocessor").get<std::string>());
  } catch (const InvalidArgument&) {
    problems.add("preprocessor", "must be one of none, canny, depth");
  }
  r.canny.low_threshold = body.value("low_threshold", r.canny.low_threshold);
  r.canny.high_threshold = body.value("high_threshold", r.canny.high_threshold);
  r.canny.sigma = body.value("sigma", r.canny.sigma);
  if (!(r.canny.low_threshold >= 0 && r.canny.low_threshold < r.canny.high_threshold &&
        r.canny.high_threshold <= 1)) {
    problems.add("low_threshold", "thresholds need 0 <= low < high <= 1");
  }
  if (!(r.canny.sigma > 0)) problems.add("sigma", "must be > 0");
  problems.raise_if_any();
  return r;
}

int http_status_for(const std::exception& e) {
  if (dynamic_cast<const MissingInput*>(&e)) return 422;
  if (dynamic_cast<const NotFound*>(&e)) return 404;
  if (dynamic_cast<const ServiceUnavailable*>(&e)) return 503;
  if (dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const FormatError*>(&e) || dynamic_cast<const json::exception*>(&e)) {
    return 400;
  }
  return 500;
}

void throw_for_status(int status, const std::string& message) {
  switch (status) {
    case 400: throw InvalidArgument(message);
    case 404: throw NotFound(message);
    case 422: throw MissingInput(message);
    case 503: throw ServiceUnavailable(message);
    default: throw Error("upstream status " + std::to_string(status) + ": " + message);
  }
}

}  // namespace diffserve

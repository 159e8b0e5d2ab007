// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/api_server.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <future>

#include "diffserve/errors.hpp"
#include "diffserve/image.hpp"
#include "diffserve/preprocess.hpp"

namespace diffserve {

using json = nlohmann::json;

namespace {

double unix_now() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

int default_concurrency() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

bool transition_allowed(TaskStatus from, TaskStatus to) {
  switch (from) {
    case TaskStatus::kQueued: return to == TaskStatus::kRunning || to == TaskStatus::kFailed;
    case TaskStatus::kRunning: return to == TaskStatus::kDone || to == TaskStatus::kFailed;
    default: return false;
  }
}

}  // namespace

ApiService::ApiService(std::shared_ptr<GenerationBackend> backend, ServiceOptions options)
    : backend_(std::move(backend)), options_(options), id_rng_(std::random_device{}()), seed_rng_(std::random_device{}()) {
  if (!backend_) throw InvalidArgument("service needs a backend");
  if (options_.concurrency == 0) options_.concurrency = default_concurrency();
  if (options_.task_ttl_s < 0) throw InvalidArgument("task TTL must be >= 0");
  executor_ = std::make_unique<BoundedExecutor>(options_.concurrency, options_.queue_size);
}

ApiService::~ApiService() { executor_.reset(); }

ApiResponse ApiService::handle(const std::string& method, const std::string& path, const std::string& body) {
  json parsed;
  std::string task_id;
  try {
    if (method == "POST") {
      try {
        parsed = json::parse(body);
      } catch (const json::parse_error& e) {
        throw SchemaError(std::string("body is not valid JSON: ") + e.what(), {});
      }
      if (parsed.is_object() && parsed.contains("task_id") && parsed["task_id"].is_string()) {
        task_id = parsed["task_id"].get<std::string>();
      }
      if (path == "/generate") return generate(parsed);
      if (path == "/tasks") return submit_task(parsed);
      if (path == "/preprocess") return preprocess(parsed);
    } else if (method == "GET") {
      if (path == "/models") return models();
      if (path == "/health") return health();
      if (path.rfind("/tasks/", 0) == 0 && path.size() > 7) return get_task(path.substr(7));
    }
    const bool known_path = path == "/generate" || path == "/tasks" || path == "/preprocess" || path == "/models" ||
                            path == "/health" || path.rfind("/tasks/", 0) == 0;
    if (known_path) return {405, json{{"success", false}, {"error", method + " not allowed on " + path}}};
    throw NotFound("no route " + method + " " + path);
  } catch (const std::exception& e) {
    json err{{"success", false}, {"error", e.what()}};
    if (!task_id.empty()) err["task_id"] = task_id;
    if (const auto* schema = dynamic_cast<const SchemaError*>(&e)) err["fields"] = schema->fields();
    return {http_status_for(e), err};
  }
}

GenerationRequest ApiService::parse(const json& body) {
  GenerationRequest r = parse_generation_request(body, options_.limits);
  if (!r.seed) {
    const std::lock_guard lock(seed_mutex_);
    r.seed = std::uniform_int_distribution<std::uint64_t>(0, 0xFFFFFFFFu)(seed_rng_);
  }
  return r;
}

GenerationJob ApiService::timed(GenerationRequest request, GenerationJob job) {
  return [task_id = std::move(request.task_id), seed = *request.seed, job = std::move(job)]() {
    const auto t0 = std::chrono::steady_clock::now();
    GenerationResult result = job();
    result.task_id = task_id;
    result.seed = seed;
    result.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
  };
}

ApiResponse ApiService::generate(const json& body) {
  GenerationRequest request = parse(body);
  GenerationJob job = timed(request, backend_->prepare(request));
  auto promise = std::make_shared<std::promise<GenerationResult>>();
  auto future = promise->get_future();
  executor_->submit([promise, job = std::move(job)]() {
    try {
      promise->set_value(job());
    } catch (...) {
      promise->set_exception(std::current_exception());
    }
  });
  return {200, json(future.get())};
}

std::string ApiService::new_task_id() {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "task-%016llx", static_cast<unsigned long long>(id_rng_()));
  return buf;
}

ApiResponse ApiService::submit_task(const json& body) {
  GenerationRequest request = parse(body);
  const std::string client_id = request.task_id;
  const std::uint64_t seed = *request.seed;
  GenerationJob job = timed(request, backend_->prepare(request));

  std::string id;
  {
    const std::lock_guard lock(tasks_mutex_);
    do {
      id = new_task_id();
    } while (tasks_.count(id));
    tasks_[id] = TaskRecord{id, client_id, TaskStatus::kQueued, unix_now(), std::nullopt, std::nullopt};
  }
  try {
    executor_->submit([this, id, client_id, seed, job = std::move(job)]() {
      set_status(id, TaskStatus::kRunning);
      try {
        set_status(id, TaskStatus::kDone, job());
      } catch (const std::exception& e) {
        GenerationResult failed;
        failed.task_id = client_id;
        failed.seed = seed;
        failed.error = e.what();
        set_status(id, TaskStatus::kFailed, failed);
      }
    });
  } catch (...) {
    const std::lock_guard lock(tasks_mutex_);
    tasks_.erase(id);
    throw;
  }
  return {202, json{{"task_id", id}, {"client_task_id", client_id}, {"status", "queued"}}};
}

void ApiService::set_status(const std::string& id, TaskStatus next, std::optional<GenerationResult> result) {
  const std::lock_guard lock(tasks_mutex_);
  TaskRecord& rec = tasks_.at(id);
  if (!transition_allowed(rec.status, next)) {
    throw Error("task " + id + ": illegal transition " + to_string(rec.status) + " -> " + to_string(next));
  }
  rec.status = next;
  if (next == TaskStatus::kDone || next == TaskStatus::kFailed) {
    rec.finished_at = unix_now();
    rec.result = std::move(result);
  }
}

void ApiService::purge_expired() {
  const double now = unix_now();
  const std::lock_guard lock(tasks_mutex_);
  for (auto it = tasks_.begin(); it != tasks_.end();) {
    if (it->second.finished_at && now - *it->second.finished_at > options_.task_ttl_s) {
      it = tasks_.erase(it);
    } else {
      ++it;
    }
  }
}

ApiResponse ApiService::get_task(const std::string& id) {
  purge_expired();
  const std::lock_guard lock(tasks_mutex_);
  const auto it = tasks_.find(id);
  if (it == tasks_.end()) throw NotFound("unknown or expired task '" + id + "'");
  return {200, json(it->second)};
}

ApiResponse ApiService::models() { return {200, backend_->models()}; }

ApiResponse ApiService::health() {
  json body{{"status", "ok"}, {"queue_depth", queue_depth()}, {"in_flight", in_flight()}};
  body.update(backend_->status());
  return {200, body};
}

ApiResponse ApiService::preprocess(const json& body) {
  const PreprocessRequest req = parse_preprocess_request(body);
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64_decode(req.image);
  } catch (const FormatError& e) {
    throw SchemaError(std::string("image: ") + e.what(), {"image"});
  }
  // Same path as a generation condition when the upload is RGB; other PNG
  // flavours go through the lenient decoder.
  GrayImage gray;
  try {
    gray = rgb_to_gray(decode_png_rgb(bytes));
  } catch (const FormatError&) {
    try {
      gray = decode_png_gray(bytes);
    } catch (const FormatError& e) {
      throw SchemaError(std::string("image: ") + e.what(), {"image"});
    }
  }
  const GrayImage map = run_preprocessor(req.preprocessor, gray, req.canny);
  return {200, json{{"image", base64_encode(encode_png(map))},
                    {"width", map.width},
                    {"height", map.height},
                    {"preprocessor", to_string(req.preprocessor)}}};
}

// ---------------------------------------------------------------------------

HttpServer::HttpServer(std::shared_ptr<ApiService> service, std::string host, int port, int threads)
    : service_(std::move(service)), host_(std::move(host)), port_(port), threads_(threads) {
  if (!service_) throw InvalidArgument("HTTP server needs a service");
  if (threads_ <= 0) threads_ = service_->options().concurrency + service_->options().queue_size + 8;
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start() {
  if (server_) throw Error("server already started");
  server_ = std::make_unique<httplib::Server>();
  const auto n = static_cast<std::size_t>(threads_);
  server_->new_task_queue = [n] { return new httplib::ThreadPool(n); };
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  const auto handler = [svc = service_](const httplib::Request& req, httplib::Response& res) {
    const ApiResponse out = svc->handle(req.method, req.path, req.body);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server_->Get(".*", handler);
  server_->Post(".*", handler);
  server_->Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  if (port_ == 0) {
    port_ = server_->bind_to_any_port(host_);
    if (port_ <= 0) throw Error("could not bind " + host_);
  } else if (!server_->bind_to_port(host_, port_)) {
    throw Error("could not bind " + host_ + ":" + std::to_string(port_));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  // stop() is a no-op until the accept loop runs, so do not hand out a
  // server that cannot be stopped yet.
  server_->wait_until_ready();
  return port_;
}

void HttpServer::stop() {
  if (!server_) return;
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "diffserve/api.hpp"
#include "diffserve/backend.hpp"
#include "diffserve/executor.hpp"

namespace httplib {
class Server;
}

namespace diffserve {

struct ServiceOptions {
  /// Generations running at once; 0 means one per hardware thread.
  int concurrency = 0;
  /// Generations allowed to wait behind the running ones.
  int queue_size = 16;
  RequestLimits limits;
  /// How long finished tasks stay readable.
  double task_ttl_s = 600.0;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// The HTTP API without the transport:
///
///   POST /generate      GenerationRequest -> GenerationResult
///   POST /tasks         GenerationRequest -> {task_id, client_task_id, status}
///   GET  /tasks/{id}    TaskRecord
///   GET  /models        [RegistryEntry]
///   GET  /health        {status, queue_depth, in_flight}
///   POST /preprocess    {image, preprocessor, thresholds} -> {image, width, height}
///
/// Error bodies are {"success": false, "error": message} plus "task_id" when
/// known and "fields" for schema violations.
class ApiService {
 public:
  ApiService(std::shared_ptr<GenerationBackend> backend, ServiceOptions options = {});
  ~ApiService();

  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

  ApiResponse generate(const nlohmann::json& body);
  ApiResponse submit_task(const nlohmann::json& body);
  ApiResponse get_task(const std::string& id);
  ApiResponse models();
  ApiResponse health();
  ApiResponse preprocess(const nlohmann::json& body);

  int queue_depth() const { return executor_->queue_depth(); }
  int in_flight() const { return executor_->in_flight(); }
  const ServiceOptions& options() const noexcept { return options_; }
  GenerationBackend& backend() noexcept { return *backend_; }

 private:
  GenerationRequest parse(const nlohmann::json& body);
  GenerationJob timed(GenerationRequest request, GenerationJob job);
  void set_status(const std::string& id, TaskStatus next, std::optional<GenerationResult> result = {});
  void purge_expired();
  std::string new_task_id();

  std::shared_ptr<GenerationBackend> backend_;
  ServiceOptions options_;

  std::mutex tasks_mutex_;
  std::map<std::string, TaskRecord> tasks_;
  std::mt19937_64 id_rng_;

  std::mutex seed_mutex_;
  std::mt19937_64 seed_rng_;

  // Declared last: joined first on destruction, while the state above lives.
  std::unique_ptr<BoundedExecutor> executor_;
};

/// Serves an ApiService over HTTP/1.1 on a background thread.
class HttpServer {
 public:
  /// `threads` connection handlers; 0 picks concurrency + queue + 8 so every
  /// admissible request, and the one after, gets a handler.
  HttpServer(std::shared_ptr<ApiService> service, std::string host, int port, int threads = 0);
  ~HttpServer();

  /// Binds (port 0 picks a free port) and starts serving. Returns the port.
  int start();
  /// Stops accepting, lets in-progress requests finish, joins.
  void stop();
  int port() const noexcept { return port_; }
  const std::string& host() const noexcept { return host_; }
  std::string address() const { return host_ + ":" + std::to_string(port_); }

 private:
  std::shared_ptr<ApiService> service_;
  std::string host_;
  int port_;
  int threads_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace diffserve

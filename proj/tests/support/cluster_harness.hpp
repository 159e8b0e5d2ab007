// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

// Stub worker servers and a router node on loopback ports, shared by the
// cluster unit tests and the acceptance run.

#pragma once

#include <httplib.h>

#include <chrono>
#include <future>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "diffserve/api_server.hpp"
#include "diffserve/cluster.hpp"
#include "diffserve/errors.hpp"

namespace harness {

using json = nlohmann::json;

inline json stub_request(const std::string& id) {
  return json{{"task_id", id}, {"prompt", "p"},  {"func_name", "t2i"}, {"steps", 2},       {"image_num", 1},
              {"width", 16},   {"height", 16},   {"use_base64", true}, {"seed", 1}};
}

// A full worker server around a stub backend.
class StubWorker {
 public:
  explicit StubWorker(std::chrono::milliseconds latency, int concurrency = 1, int queue = 64)
      : backend_(std::make_shared<diffserve::StubBackend>(latency)) {
    diffserve::ServiceOptions opt;
    opt.concurrency = concurrency;
    opt.queue_size = queue;
    service_ = std::make_shared<diffserve::ApiService>(backend_, opt);
    start(0);
  }

  void start(int port) {
    server_ = std::make_unique<diffserve::HttpServer>(service_, "127.0.0.1", port);
    port_ = server_->start();
  }
  void kill() { server_.reset(); }
  void restart() { start(port_); }

  std::string address() const { return "127.0.0.1:" + std::to_string(port_); }
  int port() const { return port_; }
  std::uint64_t completed() const { return backend_->completed(); }

 private:
  std::shared_ptr<diffserve::StubBackend> backend_;
  std::shared_ptr<diffserve::ApiService> service_;
  std::unique_ptr<diffserve::HttpServer> server_;
  int port_ = 0;
};

struct RouterNode {
  std::shared_ptr<diffserve::Router> router;
  std::shared_ptr<diffserve::ApiService> service;
  std::unique_ptr<diffserve::HttpServer> server;

  explicit RouterNode(diffserve::RouterOptions options = {})
      : router(std::make_shared<diffserve::Router>(options)) {
    diffserve::ServiceOptions opt;
    opt.concurrency = 128;
    opt.queue_size = 512;
    service = std::make_shared<diffserve::ApiService>(router, opt);
    server = std::make_unique<diffserve::HttpServer>(service, "127.0.0.1", 0);
    server->start();
  }
};

struct Burst {
  double seconds = 0;
  /// HTTP status per request, -1 when no response arrived.
  std::vector<int> statuses;
};

// Fires `n` concurrent /generate calls.
inline Burst burst(int port, int n) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::future<int>> calls;
  for (int i = 0; i < n; ++i) {
    calls.push_back(std::async(std::launch::async, [port, i] {
      httplib::Client cli("127.0.0.1", port);
      cli.set_read_timeout(std::chrono::seconds(60));
      const auto res = cli.Post("/generate", stub_request("r" + std::to_string(i)).dump(), "application/json");
      return res ? res->status : -1;
    }));
  }
  Burst out;
  for (auto& c : calls) out.statuses.push_back(c.get());
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

template <class Pred>
bool wait_for(Pred pred, double seconds) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return pred();
}

inline diffserve::WorkerStatus status_of(const diffserve::Router& r, int id) {
  for (const auto& w : r.workers()) {
    if (w.worker_id == id) return w.status;
  }
  throw diffserve::NotFound("worker " + std::to_string(id));
}

}  // namespace harness

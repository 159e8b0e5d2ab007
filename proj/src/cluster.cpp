// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/cluster.hpp"

#include <httplib.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include "diffserve/errors.hpp"

extern char** environ;

namespace diffserve {

using json = nlohmann::json;

std::string to_string(WorkerStatus s) {
  switch (s) {
    case WorkerStatus::kHealthy: return "healthy";
    case WorkerStatus::kUnhealthy: return "unhealthy";
    case WorkerStatus::kDraining: return "draining";
  }
  return "?";
}

void to_json(json& j, const WorkerRecord& w) {
  j = json{{"worker_id", w.worker_id},
           {"address", w.address},
           {"status", to_string(w.status)},
           {"in_flight", w.in_flight},
           {"last_heartbeat", w.last_heartbeat},
           {"total_completed", w.total_completed}};
}

void ScalingPolicy::validate() const {
  if (target_per_worker < 1) throw InvalidArgument("target_per_worker must be >= 1");
  if (min_workers < 1 || min_workers > max_workers) {
    throw InvalidArgument("need 1 <= min_workers <= max_workers, got " + std::to_string(min_workers) + ", " +
                          std::to_string(max_workers));
  }
  if (!(cooldown_s >= 0)) throw InvalidArgument("cooldown_s must be >= 0");
}

void to_json(json& j, const ScalingPolicy& p) {
  j = json{{"target_per_worker", p.target_per_worker},
           {"min_workers", p.min_workers},
           {"max_workers", p.max_workers},
           {"cooldown_s", p.cooldown_s}};
}

void from_json(const json& j, ScalingPolicy& p) {
  for (const auto& [key, value] : j.items()) {
    if (key != "target_per_worker" && key != "min_workers" && key != "max_workers" && key != "cooldown_s") {
      throw FormatError("unknown scaling policy key '" + key + "'");
    }
  }
  p.target_per_worker = j.value("target_per_worker", p.target_per_worker);
  p.min_workers = j.value("min_workers", p.min_workers);
  p.max_workers = j.value("max_workers", p.max_workers);
  p.cooldown_s = j.value("cooldown_s", p.cooldown_s);
  p.validate();
}

// ---------------------------------------------------------------- policy ---

std::optional<std::size_t> select_worker(const std::vector<WorkerRecord>& workers) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < workers.size(); ++i) {
    const WorkerRecord& w = workers[i];
    if (w.status != WorkerStatus::kHealthy) continue;
    if (!best) {
      best = i;
      continue;
    }
    const WorkerRecord& b = workers[*best];
    if (std::tie(w.in_flight, w.total_completed, w.worker_id) < std::tie(b.in_flight, b.total_completed, b.worker_id)) {
      best = i;
    }
  }
  return best;
}

int desired_workers(int queue_depth, int in_flight_total, const ScalingPolicy& policy) {
  const long demand = std::max(0L, static_cast<long>(queue_depth) + in_flight_total);
  const long want = (demand + policy.target_per_worker - 1) / policy.target_per_worker;
  return static_cast<int>(std::clamp<long>(want, policy.min_workers, policy.max_workers));
}

ScaleActions reconcile(const std::vector<WorkerRecord>& workers, int desired, const ScalingPolicy& policy,
                       const CooldownState& cooldown, double now) {
  desired = std::clamp(desired, policy.min_workers, policy.max_workers);
  std::vector<const WorkerRecord*> active;
  for (const auto& w : workers) {
    if (w.status != WorkerStatus::kDraining) active.push_back(&w);
  }
  const int current = static_cast<int>(active.size());
  ScaleActions actions;
  if (current == desired) return actions;
  if (cooldown.last_scale_at && now - *cooldown.last_scale_at < policy.cooldown_s) return actions;
  if (desired > current) {
    actions.spawn = desired - current;
    return actions;
  }
  std::sort(active.begin(), active.end(), [](const WorkerRecord* a, const WorkerRecord* b) {
    return a->in_flight != b->in_flight ? a->in_flight < b->in_flight : a->worker_id > b->worker_id;
  });
  for (int i = 0; i < current - desired; ++i) actions.drain.push_back(active[static_cast<std::size_t>(i)]->worker_id);
  return actions;
}

void record_probe(WorkerRecord& w, bool ok, int reported_outstanding, double now, int failure_threshold) {
  if (ok) {
    w.consecutive_failures = 0;
    w.last_heartbeat = now;
    if (w.status == WorkerStatus::kUnhealthy) w.status = WorkerStatus::kHealthy;
    // The worker's own count wins over the router's bookkeeping, which can
    // drift when a response is lost.
    w.in_flight = std::max(0, reported_outstanding);
    return;
  }
  ++w.consecutive_failures;
  if (w.consecutive_failures >= failure_threshold && w.status == WorkerStatus::kHealthy) {
    w.status = WorkerStatus::kUnhealthy;
  }
}

// ---------------------------------------------------------------- router ---

namespace {

std::pair<std::string, int> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw InvalidArgument("worker address must be host:port, got '" + address + "'");
  }
  try {
    const int port = std::stoi(address.substr(colon + 1));
    if (port <= 0 || port > 65535) throw std::out_of_range("port");
    return {address.substr(0, colon), port};
  } catch (const std::logic_error&) {
    throw InvalidArgument("bad port in worker address '" + address + "'");
  }
}

void set_timeout(httplib::Client& cli, double connect_s, double read_s) {
  const auto us = [](double s) { return std::chrono::microseconds(static_cast<std::int64_t>(s * 1e6)); };
  cli.set_connection_timeout(us(connect_s));
  cli.set_read_timeout(us(read_s));
  cli.set_write_timeout(us(read_s));
}

std::string error_message(const std::string& body) {
  try {
    const json j = json::parse(body);
    if (j.is_object() && j.contains("error") && j["error"].is_string()) return j["error"].get<std::string>();
  } catch (const json::exception&) {
  }
  return body;
}

}  // namespace

Router::Router(RouterOptions options) : options_(options) {
  if (!(options_.health_interval_s > 0)) throw InvalidArgument("health interval must be > 0");
  if (options_.failure_threshold < 1) throw InvalidArgument("failure threshold must be >= 1");
}

Router::~Router() { stop_health_loop(); }

double Router::now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

int Router::add_worker(const std::string& address) {
  split_address(address);
  const std::lock_guard lock(mutex_);
  WorkerRecord w;
  w.worker_id = next_id_++;
  w.address = address;
  workers_.push_back(w);
  return w.worker_id;
}

void Router::remove_worker(int worker_id) {
  const std::lock_guard lock(mutex_);
  std::erase_if(workers_, [worker_id](const WorkerRecord& w) { return w.worker_id == worker_id; });
}

void Router::drain_worker(int worker_id) {
  const std::lock_guard lock(mutex_);
  for (auto& w : workers_) {
    if (w.worker_id == worker_id) w.status = WorkerStatus::kDraining;
  }
}

std::vector<WorkerRecord> Router::workers() const {
  const std::lock_guard lock(mutex_);
  return workers_;
}

std::optional<WorkerRecord> Router::acquire() {
  const std::lock_guard lock(mutex_);
  const auto i = select_worker(workers_);
  if (!i) return std::nullopt;
  ++workers_[*i].in_flight;
  return workers_[*i];
}

void Router::release(int worker_id, bool completed) {
  const std::lock_guard lock(mutex_);
  for (auto& w : workers_) {
    if (w.worker_id != worker_id) continue;
    w.in_flight = std::max(0, w.in_flight - 1);
    if (completed) ++w.total_completed;
  }
}

void Router::mark_unreachable(int worker_id) {
  const std::lock_guard lock(mutex_);
  for (auto& w : workers_) {
    if (w.worker_id != worker_id) continue;
    w.consecutive_failures = std::max(w.consecutive_failures, options_.failure_threshold);
    if (w.status == WorkerStatus::kHealthy) w.status = WorkerStatus::kUnhealthy;
  }
}

GenerationResult Router::forward(const GenerationRequest& request) {
  const std::string body = json(request).dump();
  std::string last_error = "no healthy workers";
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto worker = acquire();
    if (!worker) break;
    const auto [host, port] = split_address(worker->address);
    httplib::Client cli(host, port);
    set_timeout(cli, options_.connect_timeout_s, options_.request_timeout_s);
    const auto res = cli.Post("/generate", body, "application/json");
    if (!res) {
      release(worker->worker_id, false);
      mark_unreachable(worker->worker_id);
      last_error = "worker " + worker->address + ": " + httplib::to_string(res.error());
      continue;
    }
    release(worker->worker_id, res->status == 200);
    if (res->status == 200) return json::parse(res->body).get<GenerationResult>();
    if (res->status == 503) {
      last_error = "worker " + worker->address + " is full";
      continue;
    }
    throw_for_status(res->status, error_message(res->body));
  }
  throw ServiceUnavailable("dispatch failed: " + last_error);
}

GenerationJob Router::prepare(const GenerationRequest& request) {
  return [this, request]() { return forward(request); };
}

json Router::models() {
  for (const auto& w : workers()) {
    if (w.status != WorkerStatus::kHealthy) continue;
    const auto [host, port] = split_address(w.address);
    httplib::Client cli(host, port);
    set_timeout(cli, options_.connect_timeout_s, options_.probe_timeout_s * 4);
    const auto res = cli.Get("/models");
    if (res && res->status == 200) return json::parse(res->body);
  }
  throw ServiceUnavailable("no healthy worker answered /models");
}

json Router::status() {
  int healthy = 0, total = 0;
  json list = json::array();
  for (const auto& w : workers()) {
    ++total;
    healthy += w.status == WorkerStatus::kHealthy;
    list.push_back(w);
  }
  return json{{"status", healthy > 0 ? "ok" : "degraded"},
              {"mode", "router"},
              {"workers", total},
              {"healthy_workers", healthy},
              {"worker_table", list}};
}

void Router::probe_all() {
  for (const auto& w : workers()) {
    const auto [host, port] = split_address(w.address);
    httplib::Client cli(host, port);
    set_timeout(cli, options_.probe_timeout_s, options_.probe_timeout_s);
    const auto res = cli.Get("/health");
    bool ok = false;
    int outstanding = 0;
    if (res && res->status == 200) {
      try {
        const json h = json::parse(res->body);
        outstanding = h.at("queue_depth").get<int>() + h.at("in_flight").get<int>();
        ok = true;
      } catch (const json::exception&) {
      }
    }
    const std::lock_guard lock(mutex_);
    for (auto& rec : workers_) {
      if (rec.worker_id == w.worker_id) record_probe(rec, ok, outstanding, now(), options_.failure_threshold);
    }
  }
}

void Router::start_health_loop() {
  if (loop_.joinable()) return;
  loop_stop_ = false;
  loop_ = std::thread([this] {
    // Fixed-rate ticks, so a slow round does not push later probes back.
    const auto period = std::chrono::duration<double>(options_.health_interval_s);
    auto next = std::chrono::steady_clock::now();
    std::unique_lock lock(loop_mutex_);
    while (!loop_stop_) {
      lock.unlock();
      probe_all();
      lock.lock();
      next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
      loop_cv_.wait_until(lock, next, [this] { return loop_stop_; });
    }
  });
}

void Router::stop_health_loop() {
  {
    const std::lock_guard lock(loop_mutex_);
    loop_stop_ = true;
  }
  loop_cv_.notify_all();
  if (loop_.joinable()) loop_.join();
}

// ------------------------------------------------------------ elasticity ---

ProcessLauncher::ProcessLauncher(std::vector<std::string> command, std::string host, int first_port, int last_port,
                                 double startup_timeout_s)
    : command_(std::move(command)),
      host_(std::move(host)),
      first_port_(first_port),
      last_port_(last_port),
      startup_timeout_s_(startup_timeout_s) {
  if (command_.empty()) throw InvalidArgument("worker command is empty");
  if (first_port_ <= 0 || last_port_ < first_port_ || last_port_ > 65535) {
    throw InvalidArgument("bad worker port range " + std::to_string(first_port_) + "-" + std::to_string(last_port_));
  }
}

ProcessLauncher::~ProcessLauncher() {
  std::vector<Child> children;
  {
    const std::lock_guard lock(mutex_);
    children.swap(children_);
  }
  for (const auto& c : children) {
    ::kill(c.pid, SIGTERM);
    ::waitpid(c.pid, nullptr, 0);
  }
}

std::string ProcessLauncher::spawn() {
  for (int port = first_port_; port <= last_port_; ++port) {
    {
      const std::lock_guard lock(mutex_);
      if (std::any_of(children_.begin(), children_.end(), [port](const Child& c) { return c.port == port; })) continue;
    }
    // Skip ports someone already answers on.
    {
      httplib::Client probe(host_, port);
      set_timeout(probe, 0.2, 0.2);
      if (probe.Get("/health")) continue;
    }
    std::vector<std::string> args = command_;
    args.push_back("--port");
    args.push_back(std::to_string(port));
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = 0;
    if (posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0) {
      throw Error("could not start worker " + args[0]);
    }

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(startup_timeout_s_);
    bool exited = false;
    while (std::chrono::steady_clock::now() < deadline) {
      if (::waitpid(pid, nullptr, WNOHANG) == pid) {
        exited = true;  // most likely the port was taken; try the next one
        break;
      }
      httplib::Client cli(host_, port);
      set_timeout(cli, 0.2, 1.0);
      const auto res = cli.Get("/health");
      if (res && res->status == 200) {
        const std::lock_guard lock(mutex_);
        children_.push_back({pid, port});
        return host_ + ":" + std::to_string(port);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    if (!exited) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, nullptr, 0);
      throw Error("worker on port " + std::to_string(port) + " did not become healthy");
    }
  }
  throw ServiceUnavailable("no free port in " + std::to_string(first_port_) + "-" + std::to_string(last_port_));
}

void ProcessLauncher::terminate(const std::string& address) {
  const int port = split_address(address).second;
  std::optional<Child> child;
  {
    const std::lock_guard lock(mutex_);
    for (auto it = children_.begin(); it != children_.end(); ++it) {
      if (it->port == port) {
        child = *it;
        children_.erase(it);
        break;
      }
    }
  }
  if (!child) return;
  ::kill(child->pid, SIGTERM);
  ::waitpid(child->pid, nullptr, 0);
}

Autoscaler::Autoscaler(Router& router, WorkerLauncher& launcher, ScalingPolicy policy,
                       std::function<int()> queue_depth)
    : router_(router), launcher_(launcher), policy_(policy), queue_depth_(std::move(queue_depth)) {
  policy_.validate();
  if (!queue_depth_) queue_depth_ = [] { return 0; };
}

Autoscaler::~Autoscaler() { stop(); }

ScaleActions Autoscaler::step(double now) {
  const std::lock_guard lock(step_mutex_);
  for (const auto& w : router_.workers()) {
    if (w.status == WorkerStatus::kDraining && w.in_flight == 0) {
      router_.remove_worker(w.worker_id);
      launcher_.terminate(w.address);
    }
  }
  const auto workers = router_.workers();
  int in_flight = 0;
  for (const auto& w : workers) in_flight += w.in_flight;
  const int desired = desired_workers(queue_depth_(), in_flight, policy_);
  const ScaleActions actions = reconcile(workers, desired, policy_, cooldown_, now);
  if (actions.empty()) return actions;
  cooldown_.last_scale_at = now;
  for (int id : actions.drain) router_.drain_worker(id);
  for (int i = 0; i < actions.spawn; ++i) router_.add_worker(launcher_.spawn());
  return actions;
}

void Autoscaler::start(double interval_s) {
  if (loop_.joinable()) return;
  loop_stop_ = false;
  loop_ = std::thread([this, interval_s] {
    std::unique_lock lock(loop_mutex_);
    while (!loop_stop_) {
      lock.unlock();
      try {
        step(Router::now());
      } catch (const std::exception& e) {
        std::fprintf(stderr, "autoscaler: %s\n", e.what());
      }
      lock.lock();
      loop_cv_.wait_for(lock, std::chrono::duration<double>(interval_s), [this] { return loop_stop_; });
    }
  });
}

void Autoscaler::stop() {
  {
    const std::lock_guard lock(loop_mutex_);
    loop_stop_ = true;
  }
  loop_cv_.notify_all();
  if (loop_.joinable()) loop_.join();
}

// -------------------------------------------------------------- config ---

ClusterConfig parse_cluster_config(const json& j) {
  static const std::vector<std::string> keys{
      "worker_host",        "port_range",         "static_workers",    "autoscale",         "policy",
      "health_interval_s",  "probe_timeout_s",    "request_timeout_s", "failure_threshold", "autoscale_interval_s",
      "worker_concurrency", "worker_queue_size",  "router_concurrency", "router_queue_size"};
  if (!j.is_object()) throw FormatError("cluster config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw FormatError("unknown cluster config key '" + key + "'");
    }
  }
  ClusterConfig c;
  try {
    c.worker_host = j.value("worker_host", c.worker_host);
    if (j.contains("port_range")) {
      const auto range = j.at("port_range").get<std::vector<int>>();
      if (range.size() != 2) throw FormatError("port_range must be [first, last]");
      c.first_port = range[0];
      c.last_port = range[1];
    }
    c.static_workers = j.value("static_workers", c.static_workers);
    c.autoscale = j.value("autoscale", c.autoscale);
    if (j.contains("policy")) c.policy = j.at("policy").get<ScalingPolicy>();
    c.router.health_interval_s = j.value("health_interval_s", c.router.health_interval_s);
    c.router.probe_timeout_s = j.value("probe_timeout_s", c.router.probe_timeout_s);
    c.router.request_timeout_s = j.value("request_timeout_s", c.router.request_timeout_s);
    c.router.failure_threshold = j.value("failure_threshold", c.router.failure_threshold);
    c.autoscale_interval_s = j.value("autoscale_interval_s", c.autoscale_interval_s);
    c.worker_concurrency = j.value("worker_concurrency", c.worker_concurrency);
    c.worker_queue_size = j.value("worker_queue_size", c.worker_queue_size);
    c.router_concurrency = j.value("router_concurrency", c.router_concurrency);
    c.router_queue_size = j.value("router_queue_size", c.router_queue_size);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed cluster config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid cluster config: ") + e.what());
  }
  if (c.first_port <= 0 || c.last_port < c.first_port || c.last_port > 65535) {
    throw FormatError("invalid port_range");
  }
  if (!c.autoscale && c.static_workers.empty()) {
    throw FormatError("cluster config needs static_workers or autoscale");
  }
  if (!(c.router.health_interval_s > 0) || !(c.router.probe_timeout_s > 0) || c.worker_concurrency < 1 ||
      c.worker_queue_size < 0 || c.router_concurrency < 1 || c.router_queue_size < 0) {
    throw FormatError("cluster config has a non-positive interval or size");
  }
  return c;
}

ClusterConfig load_cluster_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("no cluster config at " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("cluster config " + path.string() + " is not JSON: " + e.what());
  }
  return parse_cluster_config(j);
}

json cluster_config_json(const ClusterConfig& c) {
  return json{{"worker_host", c.worker_host},
              {"port_range", {c.first_port, c.last_port}},
              {"static_workers", c.static_workers},
              {"autoscale", c.autoscale},
              {"policy", c.policy},
              {"health_interval_s", c.router.health_interval_s},
              {"probe_timeout_s", c.router.probe_timeout_s},
              {"request_timeout_s", c.router.request_timeout_s},
              {"failure_threshold", c.router.failure_threshold},
              {"autoscale_interval_s", c.autoscale_interval_s},
              {"worker_concurrency", c.worker_concurrency},
              {"worker_queue_size", c.worker_queue_size},
              {"router_concurrency", c.router_concurrency},
              {"router_queue_size", c.router_queue_size}};
}

}  // namespace diffserve

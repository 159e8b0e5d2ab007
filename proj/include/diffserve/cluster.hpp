// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

// Router mode: a pool of worker servers behind one endpoint, with
// least-loaded dispatch, health checking and an elastic scaling policy.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffserve/backend.hpp"

namespace diffserve {

enum class WorkerStatus { kHealthy, kUnhealthy, kDraining };
std::string to_string(WorkerStatus s);

struct WorkerRecord {
  int worker_id = 0;
  /// host:port
  std::string address;
  WorkerStatus status = WorkerStatus::kHealthy;
  int in_flight = 0;
  /// Seconds on the router's steady clock; 0 before the first probe.
  double last_heartbeat = 0;
  std::uint64_t total_completed = 0;
  int consecutive_failures = 0;
};

void to_json(nlohmann::json& j, const WorkerRecord& w);

struct ScalingPolicy {
  int target_per_worker = 2;
  int min_workers = 1;
  int max_workers = 4;
  double cooldown_s = 10.0;

  /// Throws InvalidArgument unless 1 <= min <= max and target >= 1.
  void validate() const;
};

void to_json(nlohmann::json& j, const ScalingPolicy& p);
void from_json(const nlohmann::json& j, ScalingPolicy& p);

// ---- pure policy functions ----

/// Index of the healthy worker with the fewest in-flight requests. Ties go
/// to the fewest completed requests, then the lowest worker_id, so a pool
/// of idle workers is filled evenly. nullopt when none is healthy.
std::optional<std::size_t> select_worker(const std::vector<WorkerRecord>& workers);

/// clamp(ceil((queue_depth + in_flight_total) / target), min, max)
int desired_workers(int queue_depth, int in_flight_total, const ScalingPolicy& policy);

struct CooldownState {
  /// Time of the last scaling action, if any.
  std::optional<double> last_scale_at;
};

struct ScaleActions {
  int spawn = 0;
  /// worker_ids to drain.
  std::vector<int> drain;
  bool empty() const noexcept { return spawn == 0 && drain.empty(); }
};

/// Moves the non-draining worker count toward `desired`. Nothing happens
/// inside the cooldown window that follows a scaling action. Scale-down
/// drains the workers with the fewest in-flight requests, newest first on
/// ties. The caller records `now` in its CooldownState when the result is
/// non-empty.
ScaleActions reconcile(const std::vector<WorkerRecord>& workers, int desired, const ScalingPolicy& policy,
                       const CooldownState& cooldown, double now);

/// Applies one health probe outcome. A success marks the worker healthy
/// (draining stays draining) and adopts the worker's own outstanding count;
/// `failure_threshold` consecutive failures mark it unhealthy.
void record_probe(WorkerRecord& worker, bool ok, int reported_outstanding, double now, int failure_threshold = 2);

// ---- router ----

struct RouterOptions {
  double health_interval_s = 1.0;
  double probe_timeout_s = 0.5;
  double connect_timeout_s = 1.0;
  double request_timeout_s = 600.0;
  int failure_threshold = 2;
};

/// A GenerationBackend that forwards each request to the least-loaded
/// healthy worker. A worker that refuses the connection is marked
/// unhealthy at once and the request is retried on another worker; a
/// second failure reaches the client as 503.
class Router : public GenerationBackend {
 public:
  explicit Router(RouterOptions options = {});
  ~Router() override;

  int add_worker(const std::string& address);
  void remove_worker(int worker_id);
  void drain_worker(int worker_id);
  std::vector<WorkerRecord> workers() const;

  /// One probe of every worker.
  void probe_all();
  void start_health_loop();
  void stop_health_loop();

  /// Dispatches with one retry; throws like a local backend would.
  GenerationResult forward(const GenerationRequest& request);

  GenerationJob prepare(const GenerationRequest& request) override;
  nlohmann::json models() override;
  nlohmann::json status() override;

  const RouterOptions& options() const noexcept { return options_; }
  /// Seconds on the clock used for heartbeats and cooldowns.
  static double now();

 private:
  std::optional<WorkerRecord> acquire();
  void release(int worker_id, bool completed);
  void mark_unreachable(int worker_id);

  RouterOptions options_;
  mutable std::mutex mutex_;
  std::vector<WorkerRecord> workers_;
  int next_id_ = 0;

  std::mutex loop_mutex_;
  std::condition_variable loop_cv_;
  bool loop_stop_ = false;
  std::thread loop_;
};

// ---- elasticity ----

class WorkerLauncher {
 public:
  virtual ~WorkerLauncher() = default;
  /// Starts a worker and returns its address once it answers /health.
  virtual std::string spawn() = 0;
  virtual void terminate(const std::string& address) = 0;
};

/// Starts workers as local processes of the given command line, with
/// `--port <p>` appended from a port range.
class ProcessLauncher : public WorkerLauncher {
 public:
  ProcessLauncher(std::vector<std::string> command, std::string host, int first_port, int last_port,
                  double startup_timeout_s = 60.0);
  ~ProcessLauncher() override;

  std::string spawn() override;
  void terminate(const std::string& address) override;

 private:
  struct Child {
    int pid;
    int port;
  };
  std::vector<std::string> command_;
  std::string host_;
  int first_port_;
  int last_port_;
  double startup_timeout_s_;
  std::mutex mutex_;
  std::vector<Child> children_;
};

/// Periodically sizes the worker pool with desired_workers and reconcile,
/// and retires drained workers once they are idle.
class Autoscaler {
 public:
  Autoscaler(Router& router, WorkerLauncher& launcher, ScalingPolicy policy, std::function<int()> queue_depth);
  ~Autoscaler();

  /// One round at time `now`; returns the actions it applied.
  ScaleActions step(double now);
  void start(double interval_s);
  void stop();

 private:
  Router& router_;
  WorkerLauncher& launcher_;
  ScalingPolicy policy_;
  std::function<int()> queue_depth_;
  CooldownState cooldown_;
  std::mutex step_mutex_;

  std::mutex loop_mutex_;
  std::condition_variable loop_cv_;
  bool loop_stop_ = false;
  std::thread loop_;
};

// ---- configuration ----

struct ClusterConfig {
  std::string worker_host = "127.0.0.1";
  int first_port = 9100;
  int last_port = 9199;
  /// Workers started elsewhere; the router adds them at startup.
  std::vector<std::string> static_workers;
  /// Spawn and retire local worker processes with the policy below.
  bool autoscale = true;
  ScalingPolicy policy;
  RouterOptions router;
  double autoscale_interval_s = 1.0;
  int worker_concurrency = 1;
  int worker_queue_size = 16;
  /// Capacity of the router's own pool of forwarding threads.
  int router_concurrency = 64;
  int router_queue_size = 256;
};

/// Reads a JSON cluster file. Unknown keys are an error.
ClusterConfig load_cluster_config(const std::filesystem::path& path);
ClusterConfig parse_cluster_config(const nlohmann::json& j);
nlohmann::json cluster_config_json(const ClusterConfig& c);

}  // namespace diffserve

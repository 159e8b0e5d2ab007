// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

// diffserve command-line tool:
//   diffserve serve --mode single|worker|router ...
//   diffserve init-models --dir models
//   diffserve bench run --config bench.json --repeats 20 --out report

#include <CLI11.hpp>
#include <signal.h>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "diffserve/api_server.hpp"
#include "diffserve/cluster.hpp"
#include "diffserve/errors.hpp"
#include "diffserve/perfbench.hpp"
#include "diffserve/registry.hpp"

namespace fs = std::filesystem;
using namespace diffserve;

namespace {

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string models_dir = "models";
  std::string output_dir = "outputs";
  int concurrency = 0;
  int queue_size = 16;
  std::string mode = "single";
  std::string cluster_config;
  int stub_latency_ms = -1;
  double task_ttl_s = 600.0;
  int max_image_num = 4;
};

// Blocks until SIGINT or SIGTERM. The signals must be blocked in every
// thread, so this is set up before any thread starts.
sigset_t shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_shutdown(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  std::fprintf(stderr, "diffserve: signal %d, shutting down\n", sig);
}

std::shared_ptr<GenerationBackend> local_backend(const ServeArgs& a) {
  if (a.stub_latency_ms >= 0) return std::make_shared<StubBackend>(std::chrono::milliseconds(a.stub_latency_ms));
  if (!fs::exists(fs::path(a.models_dir) / "registry.json")) {
    throw NotFound("no registry.json in '" + a.models_dir + "'; run `diffserve init-models --dir " + a.models_dir +
                   "` first");
  }
  std::shared_ptr<const ModelRegistry> registry = ModelRegistry::load(a.models_dir);
  return std::make_shared<PipelineBackend>(registry, a.output_dir);
}

int serve(const ServeArgs& a) {
  const sigset_t signals = shutdown_signals();
  ServiceOptions opt;
  opt.concurrency = a.concurrency;
  opt.queue_size = a.queue_size;
  opt.task_ttl_s = a.task_ttl_s;
  opt.limits.max_image_num = a.max_image_num;

  if (a.mode == "single" || a.mode == "worker") {
    auto service = std::make_shared<ApiService>(local_backend(a), opt);
    HttpServer server(service, a.host, a.port);
    const int port = server.start();
    std::fprintf(stderr, "diffserve %s listening on %s:%d (concurrency %d, queue %d)\n", a.mode.c_str(),
                 a.host.c_str(), port, service->options().concurrency, opt.queue_size);
    wait_for_shutdown(signals);
    server.stop();
    return 0;
  }

  // Router: the same public API in front of a worker pool.
  const ClusterConfig cc = a.cluster_config.empty() ? parse_cluster_config(nlohmann::json::object())
                                                     : load_cluster_config(a.cluster_config);
  auto router = std::make_shared<Router>(cc.router);
  for (const auto& w : cc.static_workers) router->add_worker(w);
  ServiceOptions ropt = opt;
  ropt.concurrency = cc.router_concurrency;
  ropt.queue_size = cc.router_queue_size;
  auto service = std::make_shared<ApiService>(router, ropt);

  std::unique_ptr<ProcessLauncher> launcher;
  std::unique_ptr<Autoscaler> scaler;
  if (cc.autoscale) {
    std::vector<std::string> command{fs::read_symlink("/proc/self/exe").string(),
                                     "serve",
                                     "--mode",
                                     "worker",
                                     "--host",
                                     cc.worker_host,
                                     "--models-dir",
                                     a.models_dir,
                                     "--output-dir",
                                     a.output_dir,
                                     "--concurrency",
                                     std::to_string(cc.worker_concurrency),
                                     "--queue-size",
                                     std::to_string(cc.worker_queue_size),
                                     "--max-image-num",
                                     std::to_string(a.max_image_num)};
    if (a.stub_latency_ms >= 0) {
      command.push_back("--stub-latency-ms");
      command.push_back(std::to_string(a.stub_latency_ms));
    }
    launcher = std::make_unique<ProcessLauncher>(command, cc.worker_host, cc.first_port, cc.last_port);
    scaler = std::make_unique<Autoscaler>(*router, *launcher, cc.policy, [service] { return service->queue_depth(); });
    scaler->step(Router::now());  // bring up min_workers before accepting traffic
    scaler->start(cc.autoscale_interval_s);
  }
  router->start_health_loop();
  HttpServer server(service, a.host, a.port);
  const int port = server.start();
  std::fprintf(stderr, "diffserve router listening on %s:%d with %zu workers\n", a.host.c_str(), port,
               router->workers().size());
  wait_for_shutdown(signals);
  server.stop();
  if (scaler) scaler->stop();
  router->stop_health_loop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffserve: text-to-image diffusion serving"};
  app.require_subcommand(1);

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  serve_cmd->add_option("--host", sa.host, "Bind address")->envname("DIFFSERVE_HOST")->capture_default_str();
  serve_cmd->add_option("--port", sa.port, "Port, 0 for any free port")->envname("DIFFSERVE_PORT")->capture_default_str();
  serve_cmd->add_option("--models-dir", sa.models_dir, "Directory with registry.json")
      ->envname("DIFFSERVE_MODELS_DIR")
      ->capture_default_str();
  serve_cmd->add_option("--output-dir", sa.output_dir, "Where use_base64=false images are written")
      ->envname("DIFFSERVE_OUTPUT_DIR")
      ->capture_default_str();
  serve_cmd->add_option("--concurrency", sa.concurrency, "Generations at once, 0 = hardware threads")
      ->envname("DIFFSERVE_CONCURRENCY")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  serve_cmd->add_option("--queue-size", sa.queue_size, "Generations allowed to wait")
      ->envname("DIFFSERVE_QUEUE_SIZE")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  serve_cmd->add_option("--mode", sa.mode, "single, worker or router")
      ->envname("DIFFSERVE_MODE")
      ->check(CLI::IsMember({"single", "worker", "router"}))
      ->capture_default_str();
  serve_cmd->add_option("--cluster-config", sa.cluster_config, "Router mode: JSON cluster file")
      ->envname("DIFFSERVE_CLUSTER_CONFIG");
  serve_cmd->add_option("--stub-latency-ms", sa.stub_latency_ms,
                        "Serve flat images after a fixed delay instead of running models")
      ->envname("DIFFSERVE_STUB_LATENCY_MS");
  serve_cmd->add_option("--task-ttl", sa.task_ttl_s, "Seconds finished tasks stay readable")
      ->envname("DIFFSERVE_TASK_TTL")
      ->capture_default_str();
  serve_cmd->add_option("--max-image-num", sa.max_image_num, "Upper bound for image_num")
      ->envname("DIFFSERVE_MAX_IMAGE_NUM")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  std::string init_dir = "models";
  std::uint64_t init_seed = 42;
  auto* init_cmd = app.add_subcommand("init-models", "Write the toy model zoo");
  init_cmd->add_option("--dir", init_dir, "Target directory")->envname("DIFFSERVE_MODELS_DIR")->capture_default_str();
  init_cmd->add_option("--seed", init_seed, "Weight seed")->capture_default_str();

  auto* bench_cmd = app.add_subcommand("bench", "Latency and memory benchmarks");
  bench_cmd->require_subcommand(1);
  std::string bench_config, bench_out = "report";
  int repeats = 20;
  auto* run_cmd = bench_cmd->add_subcommand("run", "Baseline versus optimized comparison");
  run_cmd->add_option("--config", bench_config, "JSON bench config (defaults: reference workload)");
  run_cmd->add_option("--repeats", repeats, "Measured runs per configuration")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  run_cmd->add_option("--out", bench_out, "Report path without extension")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(sa);
    if (*init_cmd) {
      const fs::path index = init_toy_models(init_dir, init_seed);
      std::cout << "wrote " << index.string() << "\n";
      return 0;
    }
    if (*run_cmd) {
      const BenchConfig config = bench_config.empty() ? BenchConfig{} : load_bench_config(bench_config);
      const ComparisonReport report = run_comparison(config, repeats);
      write_report(report, bench_out);
      std::cout << report.table << "wrote " << bench_out << ".txt and " << bench_out << ".json\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "diffserve: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

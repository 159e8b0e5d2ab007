// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any selected criterion fails.
//
//   acceptance                 every criterion
//   acceptance kernels canny   a subset, by name

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cluster_harness.hpp"
#include "diffserve/alloc_tracker.hpp"
#include "diffserve/api_server.hpp"
#include "diffserve/backend.hpp"
#include "diffserve/cluster.hpp"
#include "diffserve/errors.hpp"
#include "diffserve/ops.hpp"
#include "diffserve/perfbench.hpp"
#include "diffserve/pipeline.hpp"
#include "diffserve/registry.hpp"
#include "diffserve/scheduler.hpp"
#include "naive.hpp"
#include "naive_canny.hpp"

using namespace diffserve;
using json = nlohmann::json;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

// Collects the sub-checks of one criterion.
class Outcome {
 public:
  void check(bool ok, const std::string& what) {
    pass_ = pass_ && ok;
    notes_.push_back(ok ? what : "FAILED " + what);
  }
  void note(const std::string& what) { notes_.push_back(what); }
  bool pass() const { return pass_; }
  std::string summary() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    return s;
  }

 private:
  bool pass_ = true;
  std::vector<std::string> notes_;
};

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const BundlePtr& toy_bundle() {
  static const BundlePtr b = init_seeded(BundleConfig{}, 42);
  return b;
}

LoraPtr trained_lora(std::uint64_t seed = 5) {
  Rng rng(seed);
  return std::make_shared<const LoraAdapter>(init_lora("style", toy_bundle()->config.unet, rng, 4, 4.0f, false));
}

Tensor random_image(std::uint64_t seed, int h = 64, int w = 64) {
  std::mt19937_64 gen(seed);
  return naive::random_tensor(gen, {3, h, w}, -1.0, 1.0);
}

Tensor step_image(int n = 64) {
  Tensor img({3, n, n}, -1.0f);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = n / 2; x < n; ++x) img[static_cast<std::size_t>((c * n + y) * n + x)] = 1.0f;
  return img;
}

PipelineParams quick(std::uint64_t seed, int steps = 4) {
  PipelineParams p;
  p.prompt = "romantic starry sky";
  p.negative_prompt = "noise, low-quality";
  p.steps = steps;
  p.seed = seed;
  return p;
}

// ---------------------------------------------------------------- kernels ---

Outcome kernels() {
  constexpr int kCases = 120;
  constexpr double kTol = 1e-5;
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(20260101);
  const auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); };
  std::map<std::string, double> worst;

  for (int i = 0; i < kCases; ++i) {
    const int m = pick(1, 12), k = pick(1, 24), n = pick(1, 12);
    const Tensor a = naive::random_tensor(gen, {m, k}), b = naive::random_tensor(gen, {k, n});
    worst["matmul"] = std::max(worst["matmul"], naive::max_diff(ops::matmul(a, b), naive::matmul(naive::of(a), naive::of(b), m, k, n)));
  }
  for (int i = 0; i < kCases; ++i) {
    const int cin = pick(1, 4), cout = pick(1, 4), kh = pick(1, 3), kw = pick(1, 3), stride = pick(1, 2),
              pad = pick(0, 1);
    const int h = pick(kh, 9), w = pick(kw, 9);
    const Tensor x = naive::random_tensor(gen, {cin, h, w}), wt = naive::random_tensor(gen, {cout, cin, kh, kw});
    const Tensor bias = naive::random_tensor(gen, {cout});
    const bool with_bias = i % 2 == 0;
    const naive::Vec bv = naive::of(bias);
    const Tensor got = ops::conv2d(x, wt, with_bias ? &bias : nullptr, stride, pad);
    const naive::Vec want =
        naive::conv2d(naive::of(x), cin, h, w, naive::of(wt), cout, kh, kw, with_bias ? &bv : nullptr, stride, pad);
    worst["conv2d"] = std::max(worst["conv2d"], naive::max_diff(got, want));
  }
  for (int i = 0; i < kCases; ++i) {
    const int n = pick(1, 10), m = pick(1, 10), d = pick(1, 16), dv = pick(1, 16);
    const Tensor q = naive::random_tensor(gen, {n, d}), k = naive::random_tensor(gen, {m, d}),
                 v = naive::random_tensor(gen, {m, dv});
    worst["attention"] = std::max(worst["attention"], naive::max_diff(ops::attention(q, k, v),
                                                                      naive::attention(naive::of(q), naive::of(k), naive::of(v), n, m, d, dv)));
  }
  for (int i = 0; i < kCases; ++i) {
    const int groups = pick(1, 4), c = groups * pick(1, 3), h = pick(1, 6), w = pick(1, 6);
    const Tensor x = naive::random_tensor(gen, {c, h, w}, -2.0, 2.0);
    const Tensor gamma = naive::random_tensor(gen, {c}, 0.5, 1.5), beta = naive::random_tensor(gen, {c});
    worst["group_norm"] =
        std::max(worst["group_norm"], naive::max_diff(ops::group_norm(x, groups, gamma, beta),
                                                      naive::group_norm(naive::of(x), c, h * w, groups, naive::of(gamma), naive::of(beta))));
  }
  for (int i = 0; i < kCases; ++i) {
    const int rows = pick(1, 8), d = pick(2, 24);
    const Tensor x = naive::random_tensor(gen, {rows, d}, -2.0, 2.0);
    const Tensor gamma = naive::random_tensor(gen, {d}, 0.5, 1.5), beta = naive::random_tensor(gen, {d});
    worst["layer_norm"] =
        std::max(worst["layer_norm"], naive::max_diff(ops::layer_norm(x, gamma, beta),
                                                      naive::layer_norm(naive::of(x), rows, d, naive::of(gamma), naive::of(beta))));
  }
  for (const auto& [op, err] : worst) out.check(err <= kTol, fmt("%s %d cases max err %.2e <= %.0e", op.c_str(), kCases, err, kTol));
  const double elapsed = seconds_since(t0);
  out.check(elapsed < 30.0, fmt("%.2f s < 30 s", elapsed));
  return out;
}

// -------------------------------------------------------------- scheduler ---

Outcome scheduler() {
  Outcome out;
  for (auto mode : {BetaMode::kLinear, BetaMode::kScaledLinear}) {
    const auto s = make_schedule(mode, 1000);
    bool monotone = true;
    double product_err = 0, variance_err = 0;
    long double acc = 1.0L;
    for (int t = 0; t < 1000; ++t) {
      const long double f = static_cast<long double>(t) / 999;
      long double beta;
      if (mode == BetaMode::kLinear) {
        beta = 1e-4L + f * (0.02L - 1e-4L);
      } else {
        const long double r = std::sqrt(1e-4L) + f * (std::sqrt(0.02L) - std::sqrt(1e-4L));
        beta = r * r;
      }
      acc *= 1.0L - beta;
      product_err = std::max(product_err, static_cast<double>(std::fabs(acc - s.alpha_bars[t])));
      if (t > 0 && !(s.alpha_bars[t] < s.alpha_bars[t - 1])) monotone = false;
      const double a = std::sqrt(s.alpha_bars[t]), b = std::sqrt(1.0 - s.alpha_bars[t]);
      variance_err = std::max(variance_err, std::fabs(a * a + b * b - 1.0));
    }
    const std::string name = to_string(mode);
    out.check(monotone, name + " alpha_bar strictly decreasing");
    out.check(product_err <= 1e-6, fmt("%s product err %.1e <= 1e-6", name.c_str(), product_err));
    out.check(variance_err <= 1e-6, fmt("%s variance err %.1e <= 1e-6", name.c_str(), variance_err));
  }

  const auto s = make_schedule();
  std::mt19937_64 gen(77);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const int t = std::uniform_int_distribution<int>(0, 999)(gen);
    const Tensor x0 = naive::random_tensor(gen, {4, 8, 8});
    Rng rng(1000 + static_cast<std::uint64_t>(i));
    const Tensor noise = rng.normal_tensor({4, 8, 8});
    worst = std::max(worst, static_cast<double>(max_abs_diff(ddim_step(add_noise(x0, noise, t, s), noise, t, -1, s), x0)));
  }
  out.check(worst <= 1e-5, fmt("DDIM inversion 20 pairs max err %.2e <= 1e-5", worst));
  return out;
}

// --------------------------------------------------------------- adapters ---

Outcome adapters() {
  Outcome out;
  const auto& b = *toy_bundle();
  Rng rng(1);
  const Tensor latent = rng.normal_tensor({4, 8, 8});
  const Tensor text = encode_text(b.config.text, b.text_encoder, tokenize("a red fox", b.config.text.max_tokens));
  const auto forward = [&](const ModelBundle& bundle, const WeightOverlay* overlay) {
    UNetExecution exec;
    exec.overlay = overlay;
    return unet_forward(bundle.config.unet, bundle.unet, latent, 640, text, {}, exec);
  };
  const Tensor plain = forward(b, nullptr);

  const auto lora = trained_lora();
  const DynamicLora off(lora, 0.0f);
  out.check(bit_equal(forward(b, &off), plain), "LoRA strength 0 bit-identical");

  Rng fresh_rng(2);
  const auto fresh = std::make_shared<const LoraAdapter>(init_lora("fresh", b.config.unet, fresh_rng));
  const DynamicLora zero_up(fresh, 1.0f);
  out.check(bit_equal(forward(b, &zero_up), plain), "LoRA B=0 bit-identical");

  const auto folded = fold_lora(b, *lora, 0.8f);
  const auto restored = unfold_lora(*folded, *lora, 0.8f);
  float round_trip = 0;
  for (const auto& [name, t] : b.unet.entries()) round_trip = std::max(round_trip, max_abs_diff(t, restored->unet.get(name)));
  out.check(round_trip <= 1e-6f, fmt("fold/unfold err %.1e <= 1e-6", round_trip));

  const DynamicLora dynamic(lora, 0.8f);
  const float fold_err = max_abs_diff(forward(*folded, nullptr), forward(b, &dynamic));
  out.check(fold_err <= 1e-5f, fmt("folded vs dynamic err %.1e <= 1e-5", fold_err));

  Rng cn_rng(9);
  const auto cn = std::make_shared<const ControlNetAdapter>(init_controlnet("canny", b, 1, cn_rng));
  const Pipeline pipe(toy_bundle());
  PipelineParams with_cn = quick(18);
  with_cn.condition_image = step_image();
  with_cn.attach_controlnet(cn, 1.0f);
  out.check(bit_equal(pipe.text_to_image(with_cn), pipe.text_to_image(quick(18))),
            "zero-init ControlNet end-to-end bit-identical");
  return out;
}

// ------------------------------------------------------------------ canny ---

GrayImage canny_oracle(const GrayImage& img, double low, double high) {
  GrayImage out(img.height, img.width);
  out.data = naive::canny(img.data, img.height, img.width, low, high, 1.0);
  return out;
}

GrayImage rotate90(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(img.width - 1 - x, y) = img.at(y, x);
  return out;
}

Outcome canny_suite() {
  Outcome out;
  const auto agrees = [](const GrayImage& img) { return canny(img, 0.1, 0.3) == canny_oracle(img, 0.1, 0.3); };

  out.check(agrees(GrayImage(16, 16, 0.6f)), "constant");
  GrayImage step(16, 16, 0.0f);
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x) step.at(y, x) = 1.0f;
  out.check(agrees(step), "vertical step");
  bool rotated = true;
  GrayImage r = step;
  for (int turn = 0; turn < 3; ++turn) {
    r = rotate90(r);
    rotated = rotated && agrees(r);
  }
  out.check(rotated, "3 rotated steps");

  std::mt19937_64 gen(20260601);
  std::uniform_real_distribution<float> level(0.0f, 1.0f), noise(-0.05f, 0.05f);
  int matched = 0, edges = 0;
  for (int i = 0; i < 20; ++i) {
    // Random 4x4 patches plus noise, so the default thresholds find edges.
    float patch[4][4];
    for (auto& row : patch)
      for (auto& v : row) v = level(gen);
    GrayImage img(16, 16);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) img.at(y, x) = std::clamp(patch[y / 4][x / 4] + noise(gen), 0.0f, 1.0f);
    const GrayImage got = canny(img, 0.1, 0.3);
    matched += got == canny_oracle(img, 0.1, 0.3);
    for (float v : got.data) edges += v == 1.0f;
  }
  out.check(matched == 20, fmt("%d/20 random 16x16 pixel-exact (%d edge pixels)", matched, edges));
  return out;
}

// --------------------------------------------------------------- pipeline ---

Outcome pipeline() {
  Outcome out;
  const Pipeline pipe(toy_bundle());
  const Pipeline other(toy_bundle());
  out.check(bit_equal(pipe.text_to_image(quick(3)), other.text_to_image(quick(3))) &&
                bit_equal(pipe.text_to_image(quick(3)), pipe.text_to_image(quick(3))),
            "same (params, seed) bit-identical");

  PipelineParams guided = quick(21), single = quick(21);
  guided.guidance_scale = 1.0f;
  single.conditional_only = true;
  out.check(bit_equal(pipe.text_to_image(guided), pipe.text_to_image(single)), "guidance 1 equals conditional-only");

  PipelineParams i2i = quick(8);
  i2i.init_image = random_image(2);
  i2i.strength = 0.0f;
  const auto& b = *toy_bundle();
  const Tensor round_trip = vae_decode(b.config.vae, b.vae, vae_encode(b.config.vae, b.vae, *i2i.init_image));
  out.check(bit_equal(pipe.image_to_image(i2i), round_trip), "i2i strength 0 equals VAE round trip");

  PipelineParams inpaint = quick(13);
  inpaint.init_image = random_image(7);
  GrayImage mask(64, 64, 0.0f);
  for (int y = 20; y < 37; ++y)
    for (int x = 5; x < 50; ++x) mask.at(y, x) = 1.0f;
  inpaint.mask_image = mask;
  const Tensor painted = pipe.inpaint(inpaint);
  std::size_t kept = 0, known = 0;
  const std::size_t plane = 64 * 64;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      if (mask.data[i] >= 0.5f) continue;
      ++known;
      const std::size_t k = c * plane + i;
      kept += std::bit_cast<std::uint32_t>(painted[k]) == std::bit_cast<std::uint32_t>((*inpaint.init_image)[k]);
    }
  out.check(kept == known, fmt("inpaint mask-0 pixels exact %zu/%zu", kept, known));

  bool counts = true;
  std::string bad;
  for (int steps : {5, 7, 20}) {
    for (float strength : {0.0f, 0.1f, 0.34f, 0.5f, 0.75f, 1.0f}) {
      PipelineParams p = quick(9, steps);
      p.init_image = random_image(3);
      p.strength = strength;
      RunStats stats;
      pipe.image_to_image(p, &stats);
      const int want = static_cast<int>(std::lround(strength * steps));
      if (stats.denoise_steps != want) {
        counts = false;
        bad += fmt(" %d@%.2f", stats.denoise_steps, strength);
      }
    }
  }
  out.check(counts, "step counts equal round(strength*steps) for 18 pairs" + bad);
  return out;
}

// -------------------------------------------------------------------- api ---

json sample_body() {
  return json{{"task_id", "001"},     {"prompt", "romantic starry sky"}, {"negative_prompt", "noise, low-quality"},
              {"func_name", "t2i"},   {"steps", 25},                     {"image_num", 1},
              {"width", 64},          {"height", 64},                    {"use_base64", true}};
}

ApiResponse post(ApiService& svc, const std::string& path, const json& body) {
  return svc.handle("POST", path, body.dump());
}

Outcome api() {
  Outcome out;
  const fs::path dir = fs::temp_directory_path() / "diffserve_acceptance_api";
  fs::remove_all(dir);
  init_toy_models(dir / "models", 42);
  std::shared_ptr<const ModelRegistry> registry = ModelRegistry::load(dir / "models");
  auto svc = std::make_shared<ApiService>(std::make_shared<PipelineBackend>(registry, dir / "out"));

  for (int n : {1, 2}) {
    json body = sample_body();
    body["image_num"] = n;
    const ApiResponse r = post(*svc, "/generate", body);
    bool decodes = r.status == 200 && r.body["images"].size() == static_cast<std::size_t>(n);
    if (decodes) {
      for (const auto& img : r.body["images"]) {
        const Tensor t = decode_png_rgb(base64_decode(img.get<std::string>()));
        decodes = decodes && t.shape() == Shape{3, 64, 64};
      }
    }
    out.check(decodes && r.body["task_id"] == "001" && r.body["success"] == true,
              fmt("sample image_num=%d -> %d with %d decodable 64x64 PNGs and echoed task_id", n, r.status, n));
  }

  struct Violation {
    std::string what;
    std::function<void(json&)> edit;
    int status;
  };
  const std::vector<Violation> violations{
      {"unknown field", [](json& b) { b["promt"] = "x"; }, 400},
      {"wrong type", [](json& b) { b["steps"] = "many"; }, 400},
      {"missing field", [](json& b) { b.erase("prompt"); }, 400},
      {"width not multiple of 8", [](json& b) { b["width"] = 60; }, 400},
      {"image_num above max", [](json& b) { b["image_num"] = 5; }, 400},
      {"bad func_name", [](json& b) { b["func_name"] = "t2v"; }, 400},
      {"i2i without init_image", [](json& b) { b["func_name"] = "i2i"; }, 422},
      {"inpaint without mask", [](json& b) {
         b["func_name"] = "inpaint";
         b["init_image"] = to_png_base64(random_image(1));
       }, 422},
      {"unknown model", [](json& b) { b["model"] = "no-such-model"; }, 404},
      {"unknown lora", [](json& b) { b["lora_name"] = "no-such-lora"; }, 404},
  };
  int right = 0;
  std::string wrong;
  for (const auto& v : violations) {
    json body = sample_body();
    body["steps"] = 2;
    v.edit(body);
    const ApiResponse r = post(*svc, "/generate", body);
    const bool ok = r.status == v.status && r.body["success"] == false && r.body.contains("error");
    right += ok;
    if (!ok) wrong += " [" + v.what + " -> " + std::to_string(r.status) + "]";
  }
  out.check(right == static_cast<int>(violations.size()),
            fmt("%d/%zu schema violations give their 4xx", right, violations.size()) + wrong);

  constexpr int kConcurrency = 2, kQueue = 3;
  ServiceOptions opt;
  opt.concurrency = kConcurrency;
  opt.queue_size = kQueue;
  auto slow = std::make_shared<ApiService>(std::make_shared<StubBackend>(500ms), opt);
  json small = sample_body();
  small["steps"] = 2;
  std::vector<std::future<ApiResponse>> calls;
  for (int i = 0; i < kConcurrency + kQueue; ++i) {
    calls.push_back(std::async(std::launch::async, [slow, small] { return post(*slow, "/generate", small); }));
  }
  harness::wait_for([&] { return slow->in_flight() == kConcurrency && slow->queue_depth() == kQueue; }, 2.0);
  const int peak_running = slow->in_flight(), peak_waiting = slow->queue_depth();
  const int extra = post(*slow, "/generate", small).status;
  int admitted_ok = 0;
  for (auto& c : calls) admitted_ok += c.get().status == 200;
  out.check(extra == 503 && admitted_ok == kConcurrency + kQueue && peak_running == kConcurrency &&
                peak_waiting == kQueue,
            fmt("C=%d B=%d: %d running, %d waiting, request %d -> %d, admitted %d/%d -> 200", kConcurrency, kQueue,
                peak_running, peak_waiting, kConcurrency + kQueue + 1, extra, admitted_ok, kConcurrency + kQueue));
  fs::remove_all(dir);
  return out;
}

// ----------------------------------------------------------- optimization ---

Outcome optimization() {
  constexpr int kRepeats = 20;
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  const BundlePtr bundle = toy_bundle();
  const PipelineParams params = reference_workload(*bundle);

  const Tensor want = Pipeline(bundle).text_to_image(params);
  int identical = 0;
  const auto combos = OptimizationConfig::all_combinations();
  for (const auto& opt : combos) {
    const Pipeline pipe(bundle, opt);
    // Twice, so the second run goes through warm caches.
    identical += bit_equal(pipe.text_to_image(params), want) && bit_equal(pipe.text_to_image(params), want);
  }
  out.check(identical == static_cast<int>(combos.size()),
            fmt("%d/%zu combinations bit-identical to baseline", identical, combos.size()));

  const BenchmarkResult baseline = run_benchmark(bundle, params, OptimizationConfig{}, kRepeats);
  const BenchmarkResult optimized = run_benchmark(bundle, params, OptimizationConfig::all_on(), kRepeats);
  OptimizationConfig fold_only;
  fold_only.fold_lora = true;
  const BenchmarkResult folded = run_benchmark(bundle, params, fold_only, kRepeats);

  const double speedup = baseline.mean_ms / optimized.mean_ms;
  out.check(speedup >= 1.3, fmt("all-on speedup %.2fx >= 1.3x (%.1f ms -> %.1f ms, %d repeats)", speedup,
                                baseline.mean_ms, optimized.mean_ms, kRepeats));
  out.check(folded.mean_ms < baseline.mean_ms,
            fmt("folded LoRA %.1f ms < dynamic %.1f ms (ratio %.3f)", folded.mean_ms, baseline.mean_ms,
                folded.mean_ms / baseline.mean_ms));

  OptimizationConfig cache_only;
  cache_only.cache_text_embeddings = true;
  const Pipeline cached(bundle, cache_only);
  RunStats first, second;
  cached.text_to_image(params, &first);
  cached.text_to_image(params, &second);
  out.check(second.text_encode_ms < 0.05 * first.text_encode_ms,
            fmt("cached text_encode %.4f ms < 5%% of %.4f ms", second.text_encode_ms, first.text_encode_ms));

  const auto loop_peak = [&](bool reuse) {
    OptimizationConfig opt;
    opt.reuse_buffers = reuse;
    const Pipeline pipe(bundle, opt);
    AllocationTracker tracker;
    RunStats stats;
    {
      ScopedTracker scope(&tracker);
      pipe.text_to_image(params, &stats);
    }
    return stats.unet_loop_peak_bytes;
  };
  const std::size_t peak_off = loop_peak(false), peak_on = loop_peak(true);
  out.check(peak_on < peak_off, fmt("buffer reuse U-Net loop peak %zu B < %zu B", peak_on, peak_off));

  const ComparisonReport report = compare_report(baseline, optimized);
  const fs::path path = fs::temp_directory_path() / "diffserve_acceptance_report";
  write_report(report, path);
  const bool shaped = report.table.find("baseline") != std::string::npos &&
                      report.table.find("optimized") != std::string::npos &&
                      report.table.find("Inference time") != std::string::npos &&
                      report.table.find("Peak allocation") != std::string::npos &&
                      fs::exists(fs::path(path.string() + ".txt")) && fs::exists(fs::path(path.string() + ".json")) &&
                      report.data["images_identical"] == true;
  out.check(shaped, "two-column report with machine-readable copy");
  std::printf("%s\n", report.table.c_str());

  const double elapsed = seconds_since(t0);
  out.check(elapsed < 300.0, fmt("%.1f s < 300 s", elapsed));
  return out;
}

// ---------------------------------------------------------------- cluster ---

WorkerRecord worker(int id, int in_flight, WorkerStatus status = WorkerStatus::kHealthy) {
  WorkerRecord w;
  w.worker_id = id;
  w.address = "127.0.0.1:" + std::to_string(9000 + id);
  w.in_flight = in_flight;
  w.status = status;
  return w;
}

Outcome cluster() {
  Outcome out;

  // Pure policies.
  const bool argmin = select_worker({worker(0, 2), worker(1, 0), worker(2, 1)}) == 1u &&
                      select_worker({worker(3, 1), worker(1, 1), worker(2, 1)}) == 1u &&
                      select_worker({worker(0, 0, WorkerStatus::kUnhealthy), worker(1, 4)}) == 1u &&
                      !select_worker({worker(0, 0, WorkerStatus::kDraining)}).has_value();
  out.check(argmin, "dispatch argmin, lowest-id tie-break, unhealthy skipped");

  bool formula = true;
  int points = 0;
  for (int target = 1; target <= 4; ++target)
    for (int lo = 1; lo <= 3; ++lo)
      for (int hi = lo; hi <= 6; ++hi)
        for (int q = 0; q <= 30; ++q)
          for (int f = 0; f <= 30; ++f) {
            const ScalingPolicy p{target, lo, hi, 10.0};
            const int want = std::clamp(static_cast<int>(std::ceil(static_cast<double>(q + f) / target)), lo, hi);
            formula = formula && desired_workers(q, f, p) == want;
            ++points;
          }
  out.check(formula, fmt("desired_workers formula on %d grid points", points));

  const ScalingPolicy policy{2, 1, 4, 10.0};
  const std::vector<WorkerRecord> two{worker(0, 0), worker(1, 0)};
  const CooldownState recent{100.0};
  const bool cooldown = reconcile(two, 4, policy, recent, 105.0).empty() &&
                        reconcile(two, 4, policy, recent, 110.0).spawn == 2 &&
                        reconcile(two, 1, policy, recent, 109.9).empty() &&
                        reconcile(two, 1, policy, CooldownState{}, 0.0).drain.size() == 1 &&
                        reconcile(two, 2, policy, CooldownState{}, 0.0).empty();
  out.check(cooldown, "reconcile respects cooldown");

  // Throughput, 64 concurrent fixed-latency requests.
  constexpr auto kLatency = 50ms;
  constexpr int kRequests = 64;
  harness::Burst single, four;
  std::vector<std::uint64_t> spread;
  {
    harness::StubWorker w(kLatency);
    harness::RouterNode node;
    node.router->add_worker(w.address());
    single = harness::burst(node.server->port(), kRequests);
  }
  {
    std::vector<std::unique_ptr<harness::StubWorker>> ws;
    harness::RouterNode node;
    for (int i = 0; i < 4; ++i) {
      ws.push_back(std::make_unique<harness::StubWorker>(kLatency));
      node.router->add_worker(ws.back()->address());
    }
    four = harness::burst(node.server->port(), kRequests);
    for (const auto& w : ws) spread.push_back(w->completed());
  }
  const auto all_ok = [](const harness::Burst& b) {
    return std::all_of(b.statuses.begin(), b.statuses.end(), [](int s) { return s == 200; });
  };
  const double speedup = single.seconds / four.seconds;
  out.check(speedup >= 3.0 && all_ok(single) && all_ok(four),
            fmt("4 workers %.2fx >= 3x single (%.2f s vs %.2f s, per worker %llu/%llu/%llu/%llu)", speedup,
                single.seconds, four.seconds, static_cast<unsigned long long>(spread[0]),
                static_cast<unsigned long long>(spread[1]), static_cast<unsigned long long>(spread[2]),
                static_cast<unsigned long long>(spread[3])));

  // Killed-worker detection with the default health interval.
  {
    RouterOptions opt;
    harness::StubWorker a(1ms), b(1ms);
    Router router(opt);
    const int ida = router.add_worker(a.address());
    router.add_worker(b.address());
    router.start_health_loop();
    std::this_thread::sleep_for(std::chrono::duration<double>(opt.health_interval_s * 1.5));
    const bool healthy_before = harness::status_of(router, ida) == WorkerStatus::kHealthy;
    a.kill();
    const auto t0 = std::chrono::steady_clock::now();
    const bool detected =
        harness::wait_for([&] { return harness::status_of(router, ida) == WorkerStatus::kUnhealthy; }, 10.0);
    const double detect = seconds_since(t0);
    router.stop_health_loop();
    out.check(healthy_before && detected && detect <= 2 * opt.health_interval_s,
              fmt("kill detected after %.2f s <= 2 x %.1f s interval", detect, opt.health_interval_s));
  }

  // Chaos: workers die and come back while 500 requests are in flight.
  {
    RouterOptions opt;
    opt.health_interval_s = 0.1;
    opt.probe_timeout_s = 0.1;
    std::vector<std::unique_ptr<harness::StubWorker>> ws;
    harness::RouterNode node(opt);
    for (int i = 0; i < 4; ++i) {
      ws.push_back(std::make_unique<harness::StubWorker>(5ms, 2, 128));
      node.router->add_worker(ws.back()->address());
    }
    node.router->start_health_loop();
    constexpr int kChaos = 500, kClients = 16;
    std::atomic<int> next{0}, answered{0}, ok{0};
    std::vector<std::string> lost;
    std::mutex mu;
    const auto client = [&] {
      httplib::Client cli("127.0.0.1", node.server->port());
      cli.set_read_timeout(30s);
      for (int i = next++; i < kChaos; i = next++) {
        const std::string id = "req-" + std::to_string(i);
        const auto res = cli.Post("/generate", harness::stub_request(id).dump(), "application/json");
        if (res) ++answered;
        if (res && res->status == 200 && json::parse(res->body)["task_id"] == id) {
          ++ok;
        } else {
          const std::lock_guard lock(mu);
          lost.push_back(id + ":" + (res ? std::to_string(res->status) : "none"));
        }
      }
    };
    std::vector<std::thread> clients;
    for (int i = 0; i < kClients; ++i) clients.emplace_back(client);
    const auto at = [&](int n) { harness::wait_for([&] { return next.load() >= n; }, 30.0); };
    at(100);
    ws[0]->kill();
    at(200);
    ws[1]->kill();
    at(300);
    ws[0]->restart();
    at(400);
    ws[2]->kill();
    for (auto& t : clients) t.join();
    node.router->stop_health_loop();
    std::string detail;
    for (std::size_t i = 0; i < std::min<std::size_t>(lost.size(), 5); ++i) detail += " " + lost[i];
    out.check(lost.empty() && ok == kChaos,
              fmt("chaos %d requests, 3 kills and a restart: %d ok, %zu lost", kChaos, ok.load(), lost.size()) +
                  detail);
  }
  return out;
}

struct Criterion {
  std::string name;
  std::string title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"kernels", "numeric kernel oracles", kernels},
      {"scheduler", "scheduler identities", scheduler},
      {"adapters", "LoRA and ControlNet identities", adapters},
      {"canny", "Canny against naive reference", canny_suite},
      {"pipeline", "pipeline determinism and contracts", pipeline},
      {"api", "HTTP API contract", api},
      {"optimization", "optimization suite", optimization},
      {"cluster", "cluster policies and integration", cluster},
  };
  std::vector<std::string> selected(argv + 1, argv + argc);
  for (const auto& s : selected) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.name == s; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", s.c_str());
      return 2;
    }
  }
  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.name) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("threw: ") + e.what());
    }
    failed += !o.pass();
    std::printf("%s %-13s %s (%.1f s): %s\n", o.pass() ? "PASS" : "FAIL", c.name.c_str(), c.title.c_str(),
                seconds_since(t0), o.summary().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/scheduler.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <shared_mutex>

#include "diffserve/errors.hpp"

namespace diffserve {

BetaMode parse_beta_mode(const std::string& name) {
  if (name == "linear") return BetaMode::kLinear;
  if (name == "scaled_linear") return BetaMode::kScaledLinear;
  throw InvalidArgument("unknown beta mode '" + name + "' (known: linear, scaled_linear)");
}

std::string to_string(BetaMode mode) { return mode == BetaMode::kLinear ? "linear" : "scaled_linear"; }

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == -1) return 1.0;
  if (t < 0 || t >= num_train_timesteps) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(num_train_timesteps) +
                          ")");
  }
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(BetaMode mode, int num_train_timesteps, double beta_start, double beta_end) {
  if (num_train_timesteps < 1) throw InvalidArgument("schedule needs at least one training timestep");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidArgument("beta range must satisfy 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.mode = mode;
  s.num_train_timesteps = num_train_timesteps;
  const auto n = static_cast<std::size_t>(num_train_timesteps);
  s.betas.resize(n);
  s.alphas.resize(n);
  s.alpha_bars.resize(n);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double frac = static_cast<double>(t) / denom;
    if (mode == BetaMode::kLinear) {
      s.betas[t] = beta_start + frac * (beta_end - beta_start);
    } else {
      const double r = std::sqrt(beta_start) + frac * (std::sqrt(beta_end) - std::sqrt(beta_start));
      s.betas[t] = r * r;
    }
    s.alphas[t] = 1.0 - s.betas[t];
    s.alpha_bars[t] = (t == 0 ? 1.0 : s.alpha_bars[t - 1]) * s.alphas[t];
  }
  return s;
}

std::vector<int> select_timesteps(int num_train_timesteps, int steps) {
  if (steps < 1 || steps > num_train_timesteps) {
    throw InvalidArgument("steps must be in [1, " + std::to_string(num_train_timesteps) + "], got " +
                          std::to_string(steps));
  }
  const int stride = num_train_timesteps / steps;
  std::vector<int> ts(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) ts[static_cast<std::size_t>(i)] = num_train_timesteps - 1 - i * stride;
  return ts;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

}  // namespace

Tensor add_noise(const Tensor& x0, const Tensor& noise, int t, const NoiseSchedule& schedule) {
  require_same_shape(x0, noise, "add_noise");
  if (t < 0) throw InvalidArgument("add_noise timestep " + std::to_string(t) + " out of range");
  const double ab = schedule.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(a * x0[i] + b * noise[i]);
  return out;
}

SchedulerState::SchedulerState(std::shared_ptr<const NoiseSchedule> s, std::vector<int> ts, float e)
    : schedule(std::move(s)), timesteps(std::move(ts)), eta(e) {
  if (!schedule) throw InvalidArgument("scheduler state needs a schedule");
  if (eta < 0.0f) throw InvalidArgument("eta must be >= 0");
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    if (timesteps[i] < 0 || timesteps[i] >= schedule->num_train_timesteps ||
        (i > 0 && timesteps[i] >= timesteps[i - 1])) {
      throw InvalidArgument("inference timesteps must be strictly decreasing within [0, T)");
    }
  }
}

int SchedulerState::current() const {
  if (done()) throw InvalidArgument("scheduler already finished");
  return timesteps[step_index];
}

int SchedulerState::next() const {
  if (done()) throw InvalidArgument("scheduler already finished");
  return step_index + 1 < timesteps.size() ? timesteps[step_index + 1] : -1;
}

void SchedulerState::advance() {
  if (done()) throw InvalidArgument("scheduler already finished");
  ++step_index;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& schedule, float eta,
                 Rng* rng) {
  require_same_shape(x_t, eps, "ddim_step");
  if (!(t > t_prev && t_prev >= -1)) {
    throw InvalidArgument("ddim_step needs t > t_prev >= -1, got t=" + std::to_string(t) +
                          " t_prev=" + std::to_string(t_prev));
  }
  if (eta < 0.0f) throw InvalidArgument("eta must be >= 0");
  const double ab_t = schedule.alpha_bar_at(t);
  const double ab_prev = schedule.alpha_bar_at(t_prev);
  const double sqrt_ab_t = std::sqrt(ab_t), sqrt_1m_ab_t = std::sqrt(1.0 - ab_t);
  double sigma = 0.0;
  if (eta > 0.0f) {
    if (rng == nullptr) throw InvalidArgument("ddim_step with eta > 0 needs an rng");
    sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
  }
  const double sqrt_ab_prev = std::sqrt(ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x0 = (x_t[i] - sqrt_1m_ab_t * eps[i]) / sqrt_ab_t;
    double v = sqrt_ab_prev * x0 + dir * eps[i];
    if (sigma > 0.0) v += sigma * rng->normal();
    out[i] = static_cast<float>(v);
  }
  return out;
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& schedule, Rng& rng) {
  require_same_shape(x_t, eps, "ddpm_step");
  if (t < 0 || t >= schedule.num_train_timesteps) {
    throw InvalidArgument("ddpm_step timestep " + std::to_string(t) + " out of range");
  }
  if (!(t > t_prev && t_prev >= -1)) throw InvalidArgument("ddpm_step needs t > t_prev >= -1");
  const double ab_t = schedule.alpha_bar_at(t);
  const double ab_prev = schedule.alpha_bar_at(t_prev);
  const double alpha = ab_t / ab_prev;
  const double beta = 1.0 - alpha;
  const double coef = beta / std::sqrt(1.0 - ab_t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double sigma = t_prev >= 0 ? std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta) : 0.0;
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double v = inv_sqrt_alpha * (x_t[i] - coef * eps[i]);
    if (sigma > 0.0) v += sigma * rng.normal();
    out[i] = static_cast<float>(v);
  }
  return out;
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& schedule, Rng& rng) {
  return ddpm_step(x_t, eps, t, t - 1, schedule, rng);
}

namespace {

struct Registry {
  std::shared_mutex mutex;
  std::map<std::string, StepFn> rules;

  Registry() {
    rules.emplace("ddim", [](const Tensor& x, const Tensor& eps, const SchedulerState& s, Rng& rng) {
      return ddim_step(x, eps, s.current(), s.next(), *s.schedule, s.eta, &rng);
    });
    rules.emplace("ddpm", [](const Tensor& x, const Tensor& eps, const SchedulerState& s, Rng& rng) {
      return ddpm_step(x, eps, s.current(), s.next(), *s.schedule, rng);
    });
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_scheduler(const std::string& name, StepFn step) {
  if (name.empty() || !step) throw InvalidArgument("scheduler registration needs a name and a step rule");
  auto& r = registry();
  std::unique_lock lock(r.mutex);
  if (!r.rules.emplace(name, std::move(step)).second) {
    throw InvalidArgument("scheduler '" + name + "' is already registered");
  }
}

StepFn get_scheduler(const std::string& name) {
  auto& r = registry();
  std::shared_lock lock(r.mutex);
  auto it = r.rules.find(name);
  if (it == r.rules.end()) {
    std::string known;
    for (const auto& [n, fn] : r.rules) known += (known.empty() ? "" : ", ") + n;
    throw NotFound("unknown scheduler '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

bool has_scheduler(const std::string& name) {
  auto& r = registry();
  std::shared_lock lock(r.mutex);
  return r.rules.contains(name);
}

std::vector<std::string> scheduler_names() {
  auto& r = registry();
  std::shared_lock lock(r.mutex);
  std::vector<std::string> out;
  for (const auto& [n, fn] : r.rules) out.push_back(n);
  return out;
}

}  // namespace diffserve

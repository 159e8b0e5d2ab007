// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffserve/rng.hpp"
#include "diffserve/tensor.hpp"

namespace diffserve {

enum class BetaMode { kLinear, kScaledLinear };

BetaMode parse_beta_mode(const std::string& name);
std::string to_string(BetaMode mode);

/// Forward-process tables, kept in double so products stay exact enough for
/// the 1e-6 identities. Immutable once built.
struct NoiseSchedule {
  BetaMode mode = BetaMode::kLinear;
  int num_train_timesteps = 1000;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  /// alpha_bars[t], or 1 for t == -1 (the clean end of the chain).
  double alpha_bar_at(int t) const;
};

NoiseSchedule make_schedule(BetaMode mode = BetaMode::kLinear, int num_train_timesteps = 1000,
                            double beta_start = 1e-4, double beta_end = 0.02);

/// Descending, stride floor(T / steps), starting at T - 1.
std::vector<int> select_timesteps(int num_train_timesteps, int steps);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise
Tensor add_noise(const Tensor& x0, const Tensor& noise, int t, const NoiseSchedule& schedule);

struct SchedulerState {
  std::shared_ptr<const NoiseSchedule> schedule;
  std::vector<int> timesteps;
  float eta = 0.0f;
  std::size_t step_index = 0;

  SchedulerState(std::shared_ptr<const NoiseSchedule> schedule, std::vector<int> timesteps, float eta = 0.0f);

  int current() const;
  /// Timestep after the current one, -1 on the final step.
  int next() const;
  bool done() const noexcept { return step_index >= timesteps.size(); }
  void advance();
};

/// Deterministic for eta == 0; otherwise draws from `rng`. `rng` may be null
/// when eta == 0.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& schedule,
                 float eta = 0.0f, Rng* rng = nullptr);

/// Ancestral step from t to t_prev (t - 1 for the full chain). With a strided
/// schedule the per-step alpha is alpha_bar_t / alpha_bar_prev. No noise is
/// added when t_prev < 0.
Tensor ddpm_step(const Tensor& x_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& schedule,
                 Rng& rng);
/// Single-step form of the full-length chain: t_prev = t - 1.
Tensor ddpm_step(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& schedule, Rng& rng);

/// A denoising rule: maps x_t and the noise prediction to x at the state's
/// next timestep.
using StepFn = std::function<Tensor(const Tensor& x_t, const Tensor& eps, const SchedulerState& state, Rng& rng)>;

/// Adds a step rule under `name`; duplicate names are rejected. The built-in
/// "ddim" and "ddpm" rules are always present.
void register_scheduler(const std::string& name, StepFn step);
/// Throws NotFound listing the registered names.
StepFn get_scheduler(const std::string& name);
bool has_scheduler(const std::string& name);
std::vector<std::string> scheduler_names();

}  // namespace diffserve

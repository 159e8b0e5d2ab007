// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/rng.hpp"

#include <cmath>
#include <numbers>

namespace diffserve {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(seed), stream_(stream) {}

Rng Rng::split(std::uint64_t stream) const noexcept { return Rng(seed_, mix64(stream_ + kGolden) ^ stream); }

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t key = mix64(seed_ ^ mix64(stream_ * kGolden + 0x632BE59BD9B4E019ull));
  return mix64(key + (counter_++) * kGolden);
}

double Rng::uniform() noexcept {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

float Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = static_cast<float>(r * std::sin(theta));
  has_spare_ = true;
  return static_cast<float>(r * std::cos(theta));
}

float Rng::truncated_normal(float std) noexcept {
  for (;;) {
    const float z = normal();
    if (std::fabs(z) <= 2.0f) return z * std;
  }
}

Tensor Rng::normal_tensor(const Shape& shape) {
  Tensor t(shape);
  fill_normal(t);
  return t;
}

void Rng::fill_normal(Tensor& t) {
  for (auto& v : t.data()) v = normal();
}

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "diffserve/tensor.hpp"

namespace diffserve {

/// Counter-based generator: sample i of stream s under seed k is a pure hash
/// of (k, s, i), so independent streams can be split off without sharing state.
/// Instances are single-owner.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  /// Independent generator for a sub-stream of the same seed.
  Rng split(std::uint64_t stream) const noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in the open interval (0, 1).
  double uniform() noexcept;
  /// Standard normal (Box-Muller).
  float normal() noexcept;
  /// Normal(0, std) redrawn until within two standard deviations.
  float truncated_normal(float std) noexcept;

  Tensor normal_tensor(const Shape& shape);
  void fill_normal(Tensor& t);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  float spare_ = 0.0f;
  bool has_spare_ = false;
};

}  // namespace diffserve

// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "diffserve/alloc_tracker.hpp"

namespace diffserve {

using Shape = std::vector<std::int64_t>;

std::string to_string(const Shape& shape);
std::int64_t numel_of(const Shape& shape);

/// Dense row-major float32 array. The shape is fixed for the lifetime of the
/// object; element values change only through the explicit in-place ops
/// (names ending in `_`) or direct `data()` writes by the owner.
class Tensor {
 public:
  using Storage = std::vector<float, TrackedAllocator<float>>;

  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, float fill);
  Tensor(Shape shape, std::span<const float> values);
  Tensor(Shape shape, std::initializer_list<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t nbytes() const noexcept { return data_.size() * sizeof(float); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return {data_.data(), data_.size()}; }
  std::span<const float> data() const noexcept { return {data_.data(), data_.size()}; }
  float* ptr() noexcept { return data_.data(); }
  const float* ptr() const noexcept { return data_.data(); }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same elements viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

 private:
  Shape shape_;
  Storage data_;
};

/// Exact bitwise equality of shape and every element.
bool bit_equal(const Tensor& a, const Tensor& b);
/// Largest |a - b| over all elements; shapes must agree.
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace diffserve

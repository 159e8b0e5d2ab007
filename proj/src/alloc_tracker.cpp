// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/alloc_tracker.hpp"

#include <string>

#include "diffserve/errors.hpp"

namespace diffserve {

namespace {
thread_local AllocationTracker* g_active = nullptr;
}

void AllocationTracker::track_alloc(std::size_t bytes) noexcept {
  const auto now = current_.fetch_add(static_cast<std::int64_t>(bytes)) + static_cast<std::int64_t>(bytes);
  allocations_.fetch_add(1);
  auto seen = peak_.load();
  while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
  }
}

void AllocationTracker::track_free(std::size_t bytes) {
  const auto b = static_cast<std::int64_t>(bytes);
  auto seen = current_.load();
  do {
    if (b > seen) {
      throw AccountingError("free of " + std::to_string(bytes) + " bytes exceeds " +
                            std::to_string(seen) + " outstanding");
    }
  } while (!current_.compare_exchange_weak(seen, seen - b));
}

void AllocationTracker::track_free_noexcept(std::size_t bytes) noexcept {
  const auto b = static_cast<std::int64_t>(bytes);
  auto seen = current_.load();
  do {
    if (b > seen) {
      underflow_.store(true);
      current_.store(0);
      return;
    }
  } while (!current_.compare_exchange_weak(seen, seen - b));
}

void AllocationTracker::reset() noexcept {
  current_.store(0);
  peak_.store(0);
  allocations_.store(0);
  underflow_.store(false);
}

void AllocationTracker::reset_peak() noexcept { peak_.store(current_.load()); }

AllocationTracker* active_tracker() noexcept { return g_active; }

ScopedTracker::ScopedTracker(AllocationTracker* tracker) noexcept : previous_(g_active) {
  g_active = tracker;
}

ScopedTracker::~ScopedTracker() { g_active = previous_; }

}  // namespace diffserve

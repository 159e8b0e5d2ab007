// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>
#include <type_traits>

namespace diffserve {

/// Running high-water mark of tensor storage. One tracker is normally owned
/// by a single generation; counters are atomic so a tensor released on a
/// different thread than the one that allocated it is still accounted.
class AllocationTracker {
 public:
  void track_alloc(std::size_t bytes) noexcept;
  /// Throws AccountingError when more is freed than is outstanding.
  void track_free(std::size_t bytes);
  /// Allocator-side variant: records the violation instead of throwing.
  void track_free_noexcept(std::size_t bytes) noexcept;

  std::size_t current() const noexcept { return static_cast<std::size_t>(current_.load()); }
  std::size_t peak() const noexcept { return static_cast<std::size_t>(peak_.load()); }
  std::size_t total_allocations() const noexcept { return allocations_.load(); }
  bool consistent() const noexcept { return !underflow_.load(); }

  /// Zeroes every counter. Only meaningful while nothing tracked is live.
  void reset() noexcept;
  /// Restarts the high-water mark from the current live size.
  void reset_peak() noexcept;

 private:
  std::atomic<std::int64_t> current_{0};
  std::atomic<std::int64_t> peak_{0};
  std::atomic<std::size_t> allocations_{0};
  std::atomic<bool> underflow_{false};
};

/// Tracker that tensors allocated on this thread report to (may be null).
AllocationTracker* active_tracker() noexcept;

/// Installs `tracker` for the current thread for the lifetime of the guard.
class ScopedTracker {
 public:
  explicit ScopedTracker(AllocationTracker* tracker) noexcept;
  ~ScopedTracker();
  ScopedTracker(const ScopedTracker&) = delete;
  ScopedTracker& operator=(const ScopedTracker&) = delete;

 private:
  AllocationTracker* previous_;
};

/// std::allocator replacement that reports to the tracker that was active
/// when the owning container was created.
template <class T>
class TrackedAllocator {
 public:
  using value_type = T;
  using propagate_on_container_move_assignment = std::true_type;
  using propagate_on_container_swap = std::true_type;
  using is_always_equal = std::false_type;

  TrackedAllocator() noexcept : tracker_(active_tracker()) {}
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>& other) noexcept : tracker_(other.tracker()) {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    if (tracker_ != nullptr) tracker_->track_alloc(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    if (tracker_ != nullptr) tracker_->track_free_noexcept(n * sizeof(T));
    ::operator delete(p);
  }

  // Copies of a tensor are charged to whoever is copying.
  TrackedAllocator select_on_container_copy_construction() const noexcept { return TrackedAllocator(); }

  AllocationTracker* tracker() const noexcept { return tracker_; }

  template <class U>
  bool operator==(const TrackedAllocator<U>& other) const noexcept {
    return tracker_ == other.tracker();
  }

 private:
  AllocationTracker* tracker_;
};

}  // namespace diffserve

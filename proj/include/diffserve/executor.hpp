// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace diffserve {

/// Fixed pool of `concurrency` threads in front of a FIFO of at most
/// `queue_capacity` waiting jobs. Admission fails once
/// concurrency + queue_capacity jobs are outstanding.
class BoundedExecutor {
 public:
  BoundedExecutor(int concurrency, int queue_capacity);
  /// Finishes every admitted job, then joins.
  ~BoundedExecutor();
  BoundedExecutor(const BoundedExecutor&) = delete;
  BoundedExecutor& operator=(const BoundedExecutor&) = delete;

  /// Throws ServiceUnavailable when full or shut down.
  void submit(std::function<void()> job);

  int queue_depth() const;
  int in_flight() const;
  int concurrency() const noexcept { return static_cast<int>(threads_.size()); }
  int queue_capacity() const noexcept { return capacity_; }

 private:
  void loop();

  int capacity_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  int running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace diffserve

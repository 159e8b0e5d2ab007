// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/executor.hpp"

#include "diffserve/errors.hpp"

namespace diffserve {

BoundedExecutor::BoundedExecutor(int concurrency, int queue_capacity) : capacity_(queue_capacity) {
  if (concurrency < 1) throw InvalidArgument("concurrency must be >= 1");
  if (queue_capacity < 0) throw InvalidArgument("queue capacity must be >= 0");
  threads_.reserve(static_cast<std::size_t>(concurrency));
  for (int i = 0; i < concurrency; ++i) threads_.emplace_back([this] { loop(); });
}

BoundedExecutor::~BoundedExecutor() {
  {
    const std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void BoundedExecutor::submit(std::function<void()> job) {
  {
    const std::lock_guard lock(mutex_);
    if (stopping_) throw ServiceUnavailable("server is shutting down");
    const int outstanding = running_ + static_cast<int>(queue_.size());
    if (outstanding >= concurrency() + capacity_) {
      throw ServiceUnavailable("queue full: " + std::to_string(running_) + " running, " +
                               std::to_string(queue_.size()) + " waiting");
    }
    // Admission counts queued plus running, so it does not depend on how
    // fast an idle thread picks the job up.
    queue_.push_back(std::move(job));
  }
  cv_.notify_one();
}

int BoundedExecutor::queue_depth() const {
  const std::lock_guard lock(mutex_);
  return static_cast<int>(queue_.size());
}

int BoundedExecutor::in_flight() const {
  const std::lock_guard lock(mutex_);
  return running_;
}

void BoundedExecutor::loop() {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
    }
    try {
      job();
    } catch (...) {
      // Jobs report their own failures; nothing may escape a pool thread.
    }
    {
      const std::lock_guard lock(mutex_);
      --running_;
    }
  }
}

}  // namespace diffserve

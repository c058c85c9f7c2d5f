#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace osta {

/// Tracks live tensor bytes and the peak reached in each labeled phase.
class AllocationMeter {
public:
  void begin_phase(const std::string& name) {
    std::lock_guard lock(mu_);
    phase_ = name;
    auto& p = peaks_[phase_];
    p = std::max(p, current_);
  }

  void allocate(std::int64_t bytes) {
    std::lock_guard lock(mu_);
    current_ += bytes;
    auto& p = peaks_[phase_];
    p = std::max(p, current_);
  }

  void release(std::int64_t bytes) {
    std::lock_guard lock(mu_);
    current_ -= bytes;
  }

  std::int64_t current() const {
    std::lock_guard lock(mu_);
    return current_;
  }

  /// Peak for one phase; zero if the phase never ran.
  std::int64_t peak(const std::string& phase) const {
    std::lock_guard lock(mu_);
    auto it = peaks_.find(phase);
    return it == peaks_.end() ? 0 : it->second;
  }

  std::int64_t overall_peak() const {
    std::lock_guard lock(mu_);
    std::int64_t p = 0;
    for (const auto& [_, v] : peaks_) p = std::max(p, v);
    return p;
  }

  std::map<std::string, std::int64_t> peaks() const {
    std::lock_guard lock(mu_);
    return peaks_;
  }

private:
  mutable std::mutex mu_;
  std::string phase_ = "default";
  std::int64_t current_ = 0;
  std::map<std::string, std::int64_t> peaks_;
};

/// Scoped phase label; restores nothing, phases are sequential.
inline void enter_phase(AllocationMeter* meter, const std::string& name) {
  if (meter) meter->begin_phase(name);
}

namespace detail {

/// Per-thread cache of released buffers. Large activation buffers are
/// requested every training step; reusing them avoids page-faulting fresh
/// memory each time.
template <typename T>
class BufferPool {
public:
  struct Block {
    std::unique_ptr<T[]> data;
    std::size_t capacity = 0;
  };

  static BufferPool& local() {
    thread_local BufferPool pool;
    return pool;
  }

  Block acquire(std::size_t n) {
    auto best = free_.end();
    for (auto it = free_.begin(); it != free_.end(); ++it) {
      if (it->capacity >= n && (best == free_.end() || it->capacity < best->capacity)) best = it;
    }
    if (best != free_.end()) {
      Block b = std::move(*best);
      free_.erase(best);
      return b;
    }
    return {std::unique_ptr<T[]>(new T[n]), n};
  }

  void release(Block b) {
    if (!b.data) return;
    free_.push_back(std::move(b));
    if (free_.size() > kMaxCached) free_.erase(free_.begin());
  }

private:
  static constexpr std::size_t kMaxCached = 16;
  std::vector<Block> free_;
};

} // namespace detail

enum class Fill { Zero, Uninitialized };

/// Heap buffer whose logical size is reported to an AllocationMeter for its lifetime.
template <typename T>
class TrackedBuffer {
public:
  TrackedBuffer() = default;
  TrackedBuffer(std::size_t n, AllocationMeter* meter, Fill fill = Fill::Zero)
      : block_(detail::BufferPool<T>::local().acquire(n)), size_(n), meter_(meter) {
    if (fill == Fill::Zero) std::fill(block_.data.get(), block_.data.get() + n, T{});
    if (meter_) meter_->allocate(bytes());
  }
  TrackedBuffer(const TrackedBuffer&) = delete;
  TrackedBuffer& operator=(const TrackedBuffer&) = delete;
  TrackedBuffer(TrackedBuffer&& o) noexcept
      : block_(std::move(o.block_)), size_(std::exchange(o.size_, 0)), meter_(std::exchange(o.meter_, nullptr)) {}
  TrackedBuffer& operator=(TrackedBuffer&& o) noexcept {
    if (this != &o) {
      reset();
      block_ = std::move(o.block_);
      size_ = std::exchange(o.size_, 0);
      meter_ = std::exchange(o.meter_, nullptr);
    }
    return *this;
  }
  ~TrackedBuffer() { reset(); }

  void reset() {
    if (meter_) meter_->release(bytes());
    meter_ = nullptr;
    size_ = 0;
    detail::BufferPool<T>::local().release(std::move(block_));
    block_ = {};
  }

  T* data() noexcept { return block_.data.get(); }
  const T* data() const noexcept { return block_.data.get(); }
  std::size_t size() const noexcept { return size_; }
  T& operator[](std::size_t i) noexcept { return block_.data[i]; }
  const T& operator[](std::size_t i) const noexcept { return block_.data[i]; }

private:
  std::int64_t bytes() const noexcept { return static_cast<std::int64_t>(size_ * sizeof(T)); }

  typename detail::BufferPool<T>::Block block_;
  std::size_t size_ = 0;
  AllocationMeter* meter_ = nullptr;
};

} // namespace osta

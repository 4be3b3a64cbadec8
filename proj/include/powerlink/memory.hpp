#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace powerlink {

/// Per-thread byte counters for buffers allocated through TrackingAllocator.
/// Used to instrument the auxiliary memory of an explanation job.
class MemoryMeter {
 public:
  static std::size_t current() noexcept;
  static std::size_t peak() noexcept;
  /// Resets the high-water mark to the current live byte count.
  static void reset_peak() noexcept;

  static void on_allocate(std::size_t bytes) noexcept;
  static void on_deallocate(std::size_t bytes) noexcept;
};

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    MemoryMeter::on_allocate(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    MemoryMeter::on_deallocate(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

template <class T>
using tracked_vector = std::vector<T, TrackingAllocator<T>>;

}  // namespace powerlink

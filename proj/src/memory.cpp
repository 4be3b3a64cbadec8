#include "powerlink/memory.hpp"

#include <algorithm>

namespace powerlink {
namespace {
thread_local std::size_t live_bytes = 0;
thread_local std::size_t peak_bytes = 0;
}  // namespace

std::size_t MemoryMeter::current() noexcept { return live_bytes; }
std::size_t MemoryMeter::peak() noexcept { return peak_bytes; }
void MemoryMeter::reset_peak() noexcept { peak_bytes = live_bytes; }

void MemoryMeter::on_allocate(std::size_t bytes) noexcept {
  live_bytes += bytes;
  peak_bytes = std::max(peak_bytes, live_bytes);
}

// A buffer can be released on a different thread than the one that
// allocated it; clamp rather than wrap.
void MemoryMeter::on_deallocate(std::size_t bytes) noexcept {
  live_bytes = bytes > live_bytes ? 0 : live_bytes - bytes;
}

}  // namespace powerlink

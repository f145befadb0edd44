#include "gv/meter.hpp"

#include <algorithm>
#include <atomic>

#include "gv/error.hpp"

namespace gv {
namespace {

std::atomic<bool> g_active{false};
std::atomic<std::int64_t> g_current{0};
std::atomic<std::int64_t> g_peak{0};

}  // namespace

namespace meter_detail {

void on_allocate(std::size_t elements) noexcept {
  if (!g_active.load(std::memory_order_relaxed)) return;
  const auto now = g_current.fetch_add(static_cast<std::int64_t>(elements)) +
                   static_cast<std::int64_t>(elements);
  auto peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void on_deallocate(std::size_t elements) noexcept {
  if (!g_active.load(std::memory_order_relaxed)) return;
  g_current.fetch_sub(static_cast<std::int64_t>(elements));
}

}  // namespace meter_detail

ElementMeter::ElementMeter() {
  bool expected = false;
  if (!g_active.compare_exchange_strong(expected, true)) {
    throw ContractError("element meter: nested meters are not supported");
  }
  g_current = 0;
  g_peak = 0;
}

ElementMeter::~ElementMeter() { g_active = false; }

std::int64_t ElementMeter::peak() const noexcept { return g_peak.load(); }

std::int64_t ElementMeter::current() const noexcept { return g_current.load(); }

bool ElementMeter::active() noexcept { return g_active.load(); }

}  // namespace gv

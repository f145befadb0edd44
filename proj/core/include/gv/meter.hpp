#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace gv {

namespace meter_detail {
void on_allocate(std::size_t elements) noexcept;
void on_deallocate(std::size_t elements) noexcept;
}  // namespace meter_detail

// Allocator that reports element counts to the active ElementMeter, if any.
// All tensor storage (values and gradients) goes through it.
template <class T>
struct MeteredAllocator {
  using value_type = T;

  MeteredAllocator() noexcept = default;
  template <class U>
  MeteredAllocator(const MeteredAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    meter_detail::on_allocate(n);
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    meter_detail::on_deallocate(n);
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const MeteredAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Buffer = std::vector<T, MeteredAllocator<T>>;

// High-water mark of live tensor elements allocated while the meter is in
// scope, relative to the moment it was constructed. Only one meter may be
// active at a time; constructing a second throws ContractError.
class ElementMeter {
 public:
  ElementMeter();
  ~ElementMeter();
  ElementMeter(const ElementMeter&) = delete;
  ElementMeter& operator=(const ElementMeter&) = delete;

  std::int64_t peak() const noexcept;
  std::int64_t current() const noexcept;

  static bool active() noexcept;
};

template <class F>
std::int64_t element_meter(F&& run) {
  ElementMeter meter;
  std::forward<F>(run)();
  return meter.peak();
}

}  // namespace gv

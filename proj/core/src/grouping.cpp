#include "gv/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gv/error.hpp"

namespace gv {
namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::size_t ceil_sqrt(std::size_t v) {
  auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(v)));
  while (r * r > v) --r;
  while (r * r < v) ++r;
  return r;
}

}  // namespace

GroupBounds group_bounds(std::size_t v, std::size_t groups, std::size_t g) {
  if (groups == 0 || groups > v) {
    throw IndexError("group_bounds: need 1 <= G <= v, got G=" + std::to_string(groups) +
                     " v=" + std::to_string(v));
  }
  if (g >= groups) {
    throw IndexError("group_bounds: group " + std::to_string(g) + " outside [0, " +
                     std::to_string(groups) + ")");
  }
  return {v * g / groups, v * (g + 1) / groups - 1};
}

GroupShape optimal_group_size(std::size_t v) {
  if (v == 0) throw IndexError("optimal_group_size: empty vocabulary");
  const std::size_t s = ceil_sqrt(v);
  return {ceil_div(v, s), s};
}

GroupPartition::GroupPartition(std::size_t v, std::size_t groups, std::size_t size)
    : v_(v), groups_(groups), size_(size) {}

GroupPartition GroupPartition::with_group_size(std::size_t v, std::size_t group_size) {
  if (v == 0 || group_size == 0 || group_size > v) {
    throw ConfigError("group partition: need 1 <= S <= v, got S=" + std::to_string(group_size) +
                      " v=" + std::to_string(v));
  }
  return GroupPartition(v, ceil_div(v, group_size), group_size);
}

GroupPartition GroupPartition::with_group_count(std::size_t v, std::size_t groups) {
  if (v == 0 || groups == 0 || groups > v) {
    throw ConfigError("group partition: need 1 <= G <= v, got G=" + std::to_string(groups) +
                      " v=" + std::to_string(v));
  }
  return GroupPartition(v, groups, ceil_div(v, groups));
}

GroupPartition GroupPartition::optimal(std::size_t v) {
  const auto shape = optimal_group_size(v);
  return GroupPartition(v, shape.groups, shape.group_size);
}

GroupCoord GroupPartition::locate(std::size_t id) const {
  if (id >= v_) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(v_));
  }
  return {id / size_, id % size_};
}

std::size_t GroupPartition::token_id(GroupCoord coord) const {
  if (coord.group >= groups_ || coord.local >= size_) {
    throw IndexError("group coordinate (" + std::to_string(coord.group) + ", " +
                     std::to_string(coord.local) + ") outside " + std::to_string(groups_) + "x" +
                     std::to_string(size_));
  }
  return coord.group * size_ + coord.local;
}

std::size_t GroupPartition::valid_in_group(std::size_t g) const {
  if (g >= groups_) {
    throw IndexError("group " + std::to_string(g) + " outside [0, " + std::to_string(groups_) +
                     ")");
  }
  const std::size_t start = g * size_;
  if (start >= v_) return 0;
  return std::min(size_, v_ - start);
}

}  // namespace gv

#pragma once

#include <cstddef>

// Partition of token ids into contiguous groups. Ids are assumed to be in
// BPE creation order, so low groups hold the earliest (most frequent) units.
namespace gv {

struct GroupBounds {
  std::size_t start;
  std::size_t end;  // inclusive
  bool operator==(const GroupBounds&) const = default;
};

// Floor-formula bounds of group g for a vocabulary of v ids split G ways:
// start = floor(v*g/G), end = floor(v*(g+1)/G) - 1. Sizes may differ by one.
GroupBounds group_bounds(std::size_t v, std::size_t groups, std::size_t g);

struct GroupCoord {
  std::size_t group;
  std::size_t local;
  bool operator==(const GroupCoord&) const = default;
};

struct GroupShape {
  std::size_t groups;
  std::size_t group_size;
  bool operator==(const GroupShape&) const = default;
};

// group_size = ceil(sqrt(v)), groups = ceil(v / group_size).
GroupShape optimal_group_size(std::size_t v);

// Equal-size layout used by the grouped head: G groups of S slots each,
// covering [0, G*S). Ids in [v, G*S) are padding and never valid tokens.
class GroupPartition {
 public:
  static GroupPartition with_group_size(std::size_t v, std::size_t group_size);
  static GroupPartition with_group_count(std::size_t v, std::size_t groups);
  static GroupPartition optimal(std::size_t v);

  std::size_t vocab_size() const noexcept { return v_; }
  std::size_t num_groups() const noexcept { return groups_; }
  std::size_t group_size() const noexcept { return size_; }
  std::size_t padded_size() const noexcept { return groups_ * size_; }

  GroupCoord locate(std::size_t id) const;
  std::size_t token_id(GroupCoord coord) const;
  bool is_padding(std::size_t id) const noexcept { return id >= v_; }
  // Number of real (non-padding) ids in group g; 0 for an all-padding group.
  std::size_t valid_in_group(std::size_t g) const;

  bool operator==(const GroupPartition&) const = default;

 private:
  GroupPartition(std::size_t v, std::size_t groups, std::size_t size);

  std::size_t v_ = 0;
  std::size_t groups_ = 0;
  std::size_t size_ = 0;
};

}  // namespace gv

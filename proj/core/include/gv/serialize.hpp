#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gv/tensor.hpp"

namespace gv {

// GVT1 container: "GVT1", dtype byte (4 = fp32, 8 = fp64), rank as uint32,
// extents as uint64, raw elements. All integers and elements little-endian.
template <class T>
void write_tensor(std::ostream& out, const Tensor<T>& t);

// Reads either dtype and converts to T.
template <class T>
Tensor<T> read_tensor(std::istream& in);

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path);

// A directory of named tensors, one `<name>.gvt` file each.
template <class T>
void save_tensors(const std::filesystem::path& dir, const std::vector<NamedTensor<T>>& tensors);

// Loads into tensors that already have the expected names and shapes.
template <class T>
void load_tensors_into(const std::filesystem::path& dir, std::vector<NamedTensor<T>>& tensors);

}  // namespace gv

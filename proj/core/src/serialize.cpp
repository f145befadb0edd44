#include "gv/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "gv/error.hpp"

namespace gv {
namespace {

static_assert(std::endian::native == std::endian::little,
              "GVT1 I/O assumes a little-endian host");

constexpr char kMagic[4] = {'G', 'V', 'T', '1'};

template <class U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <class U>
U get(std::istream& in) {
  U value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(U))) {
    throw InputError("GVT1: truncated stream");
  }
  return value;
}

template <class Src, class T>
void read_elements(std::istream& in, std::span<T> dst) {
  std::vector<Src> raw(dst.size());
  if (!raw.empty() &&
      !in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(Src)))) {
    throw InputError("GVT1: truncated element data");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) dst[i] = static_cast<T>(raw[i]);
}

}  // namespace

template <class T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  out.write(kMagic, 4);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(sizeof(T)));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put<std::uint64_t>(out, e);
  auto v = t.values();
  out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
  if (!out) throw InputError("GVT1: write failed");
}

template <class T>
Tensor<T> read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw InputError("GVT1: bad magic");
  }
  const auto dtype = get<std::uint8_t>(in);
  if (dtype != 4 && dtype != 8) throw InputError("GVT1: unknown dtype byte " + std::to_string(dtype));
  const auto rank = get<std::uint32_t>(in);
  if (rank > 16) throw InputError("GVT1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get<std::uint64_t>(in);
  Tensor<T> t(shape);
  if (dtype == 4) {
    read_elements<float>(in, t.values());
  } else {
    read_elements<double>(in, t.values());
  }
  return t;
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_tensor<T>(in);
}

template <class T>
void save_tensors(const std::filesystem::path& dir, const std::vector<NamedTensor<T>>& tensors) {
  std::filesystem::create_directories(dir);
  for (const auto& nt : tensors) save_tensor(dir / (nt.name + ".gvt"), nt.tensor);
}

template <class T>
void load_tensors_into(const std::filesystem::path& dir, std::vector<NamedTensor<T>>& tensors) {
  for (auto& nt : tensors) {
    auto loaded = load_tensor<T>(dir / (nt.name + ".gvt"));
    if (loaded.shape() != nt.tensor.shape()) {
      throw ConfigError("tensor " + nt.name + ": stored shape " + shape_string(loaded.shape()) +
                        " but model expects " + shape_string(nt.tensor.shape()));
    }
    auto dst = nt.tensor.values();
    auto src = loaded.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

#define GV_INSTANTIATE_IO(T)                                                              \
  template void write_tensor<T>(std::ostream&, const Tensor<T>&);                         \
  template Tensor<T> read_tensor<T>(std::istream&);                                       \
  template void save_tensor<T>(const std::filesystem::path&, const Tensor<T>&);           \
  template Tensor<T> load_tensor<T>(const std::filesystem::path&);                        \
  template void save_tensors<T>(const std::filesystem::path&,                             \
                                const std::vector<NamedTensor<T>>&);                      \
  template void load_tensors_into<T>(const std::filesystem::path&, std::vector<NamedTensor<T>>&);

GV_INSTANTIATE_IO(float)
GV_INSTANTIATE_IO(double)

}  // namespace gv

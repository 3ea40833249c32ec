#pragma once

// Binary checkpoint layout (all integers little-endian u32):
//   "DLN1" | version | entry count
//   per entry: name length | UTF-8 name | rank | dims... |
//              values as little-endian binary32, row-major | trainable byte (1/0)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "dln/param_store.hpp"

namespace dln {

inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'L', 'N', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace detail

template <class T>
void write_checkpoint(std::ostream& os, const ParamStore<T>& store) {
  os.write(kCheckpointMagic.data(), 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store) {
    detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (T v : e.tensor.values()) detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    os.put(e.trainable ? 1 : 0);
  }
  if (!os) throw FormatError("failed writing checkpoint");
}

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write_checkpoint(os, store);
}

template <class T>
ParamStore<T> read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic.data(), 4) != 0)
    throw FormatError("not a DLN checkpoint (bad magic)");
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_u32(is);
  ParamStore<T> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_u32(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint truncated in entry name");
    const auto rank = detail::get_u32(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u32(is);
    Tensor<T> t(shape);
    for (T& v : t.values()) v = static_cast<T>(std::bit_cast<float>(detail::get_u32(is)));
    const int flag = is.get();
    if (flag != 0 && flag != 1) throw FormatError("bad trainable flag for '" + name + "'");
    store.add(std::move(name), std::move(t), flag == 1);
  }
  return store;
}

template <class T>
ParamStore<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path + "'");
  return read_checkpoint<T>(is);
}

}  // namespace dln

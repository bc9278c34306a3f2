#pragma once

// Portable tensor files: little-endian, magic "CTT1", u32 rank, u32 per
// dimension, then an f32 row-major payload.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"

namespace svmar::io {

inline constexpr std::array<char, 4> kTensorMagic{'C', 'T', 'T', '1'};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serialize to the portable byte layout. Values are narrowed to f32.
inline std::vector<unsigned char> encode_tensor(const Tensor& t) {
  std::vector<unsigned char> out;
  out.reserve(8 + 4 * t.rank() + 4 * t.size());
  out.insert(out.end(), kTensorMagic.begin(), kTensorMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.values()) {
    const float f = static_cast<float>(v);
    detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline Tensor decode_tensor(const std::vector<unsigned char>& bytes, const std::string& origin = "") {
  auto fail = [&](const std::string& why) { throw IoError("bad tensor file " + origin + ": " + why); };
  if (bytes.size() < 8) fail("truncated header");
  if (std::memcmp(bytes.data(), kTensorMagic.data(), 4) != 0) fail("bad magic");
  const std::uint32_t rank = detail::get_u32(bytes.data() + 4);
  if (bytes.size() < 8 + 4ull * rank) fail("truncated shape");
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = detail::get_u32(bytes.data() + 8 + 4 * i);
  const std::size_t n = shape_size(shape);
  const std::size_t off = 8 + 4ull * rank;
  if (bytes.size() != off + 4 * n) fail("payload size mismatch");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i)
    data[i] = static_cast<double>(std::bit_cast<float>(detail::get_u32(bytes.data() + off + 4 * i)));
  return Tensor(std::move(shape), std::move(data));
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_bytes(path, encode_tensor(t));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_bytes(path), path.string());
}

template <class Tag>
void write_grid(const std::filesystem::path& path, const Grid<Tag>& g) {
  write_tensor(path, g.to_tensor());
}

template <class GridT>
GridT read_grid(const std::filesystem::path& path) {
  return GridT::from_tensor(read_tensor(path));
}

/// Round every value through f32, i.e. what a write/read cycle returns.
inline Tensor quantize_f32(Tensor t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

}  // namespace svmar::io

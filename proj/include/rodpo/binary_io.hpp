#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "rodpo/numerics/tensor.hpp"

namespace rodpo::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(std::string("truncated input while reading ") + what);
  return v;
}

/// u32 length followed by the bytes.
inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what, std::uint32_t max_len = 1u << 24) {
  const auto n = read_pod<std::uint32_t>(in, what);
  if (n > max_len) throw DataError(std::string("implausible length while reading ") + what);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw DataError(std::string("truncated input while reading ") + what);
  return s;
}

/// u64 rows, u64 cols, then row-major float32 values.
inline void write_matrix(std::ostream& out, const Matrix<float>& m) {
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

inline Matrix<float> read_matrix(std::istream& in, const char* what) {
  const auto rows = read_pod<std::uint64_t>(in, what);
  const auto cols = read_pod<std::uint64_t>(in, what);
  if (rows > (1ULL << 32) || cols > (1ULL << 24) || rows * cols > (1ULL << 34)) {
    throw DataError(std::string("corrupt matrix header in ") + what);
  }
  Matrix<float> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!in) throw DataError(std::string("truncated matrix payload in ") + what);
  return m;
}

}  // namespace rodpo::io

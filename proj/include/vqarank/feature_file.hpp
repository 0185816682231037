#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include "vqarank/errors.hpp"
#include "vqarank/matrix.hpp"

namespace vqarank {

// Feature table container:
//   "MMFT" | u32 version=1 | u32 count | u32 dim   (all little-endian)
//   count*dim IEEE-754 f32, little-endian, row-major
//   u64 FNV-1a checksum of the payload bytes
// Total size is exactly 16 + 4*count*dim + 8 bytes. Values are stored at
// 32-bit precision and widened to 64-bit on load.
class FeatureFileError : public IoError {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, BadSize, BadChecksum };
  FeatureFileError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(const std::string& in, std::size_t at) {
  return std::bit_cast<float>(get_u32(in, at));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(const std::string& in, std::size_t at) {
  return std::bit_cast<double>(get_u64(in, at));
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

inline std::string feature_bytes(const Matrix& m) {
  if (m.rows > 0xffffffffULL || m.cols > 0xffffffffULL)
    throw ParamError("feature table too large for the format");
  std::string out;
  out.reserve(16 + 4 * m.size() + 8);
  out.append("MMFT");
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f))
      throw DataError("feature value " + std::to_string(v) + " is not finite at 32-bit");
    detail::put_f32(out, f);
  }
  detail::put_u64(out, fnv1a64(reinterpret_cast<const unsigned char*>(out.data()) + 16,
                               out.size() - 16));
  return out;
}

inline Matrix parse_features(const std::string& bytes, const std::string& ctx) {
  using Kind = FeatureFileError::Kind;
  if (bytes.size() < 16)
    throw FeatureFileError(Kind::Truncated, ctx + ": " + std::to_string(bytes.size()) +
                                                " bytes, header needs 16");
  if (bytes.compare(0, 4, "MMFT") != 0)
    throw FeatureFileError(Kind::BadMagic, ctx + ": bad magic");
  const std::uint32_t version = detail::get_u32(bytes, 4);
  if (version != 1)
    throw FeatureFileError(Kind::BadVersion,
                           ctx + ": unsupported version " + std::to_string(version));
  const std::uint64_t count = detail::get_u32(bytes, 8);
  const std::uint64_t dim = detail::get_u32(bytes, 12);
  const std::uint64_t cells = count * dim;  // both < 2^32, no overflow
  if (cells > (0xffffffffffffffffULL - 24) / 4)
    throw FeatureFileError(Kind::Truncated,
                           ctx + ": header implies an impossibly large payload");
  const std::uint64_t expected = 16 + 4 * cells + 8;
  if (bytes.size() < expected)
    throw FeatureFileError(Kind::Truncated, ctx + ": " + std::to_string(bytes.size()) +
                                                " bytes, expected " + std::to_string(expected));
  if (bytes.size() > expected)
    throw FeatureFileError(Kind::BadSize, ctx + ": " + std::to_string(bytes.size()) +
                                              " bytes, expected " + std::to_string(expected));
  const std::size_t payload = static_cast<std::size_t>(4 * cells);
  const std::uint64_t sum =
      fnv1a64(reinterpret_cast<const unsigned char*>(bytes.data()) + 16, payload);
  if (sum != detail::get_u64(bytes, 16 + payload))
    throw FeatureFileError(Kind::BadChecksum, ctx + ": checksum mismatch");
  Matrix m(static_cast<std::size_t>(count), static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    m.data[i] = static_cast<double>(detail::get_f32(bytes, 16 + 4 * i));
    if (!std::isfinite(m.data[i]))
      throw DataError(ctx + ": non-finite value at entry " + std::to_string(i));
  }
  return m;
}

inline void write_features(const std::string& path, const Matrix& m) {
  detail::write_file_bytes(path, feature_bytes(m));
}

inline Matrix read_features(const std::string& path) {
  return parse_features(detail::read_file_bytes(path), path);
}

}  // namespace vqarank

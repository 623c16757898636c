#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vspcn/errors.hpp"
#include "vspcn/tensor.hpp"

// Little-endian building blocks shared by the dataset (VSPD) and checkpoint
// (VSPC) containers:
//
//   magic[4] | u16 version | u64 payload length | payload | u32 crc32(all preceding bytes)
//
// A tensor inside a payload is  u32 rank | u64 extent * rank | f64 * volume.
namespace vspcn::io {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  template <std::floating_point T>
  void tensor(const Tensor<T>& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) u64(e);
    for (T v : t.values()) f64(static_cast<double>(v));
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }

  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::string str() { return raw(u32()); }

  Tensor<double> tensor(std::string_view name) {
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) {
      throw FormatError(what_ + ": tensor '" + std::string(name) + "' has invalid rank " + std::to_string(rank));
    }
    Shape shape(rank);
    std::uint64_t volume = 1;
    for (auto& e : shape) {
      const std::uint64_t v = u64();
      if (v == 0) throw FormatError(what_ + ": tensor '" + std::string(name) + "' has a zero extent");
      e = v;
      volume *= v;
      if (volume > remaining() / 8 + 1) {
        throw TruncatedError(what_ + ": truncated inside tensor '" + std::string(name) + "'");
      }
    }
    std::vector<double> data(volume);
    for (auto& v : data) v = f64();
    return Tensor<double>(std::move(shape), std::move(data));
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw TruncatedError(what_ + ": file is truncated");
  }

  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Wraps a payload into a container: header, length, payload, checksum.
inline std::vector<std::uint8_t> seal_container(std::string_view magic, std::uint16_t version,
                                                const std::vector<std::uint8_t>& payload) {
  ByteWriter w;
  w.raw(magic);
  w.u16(version);
  w.u64(payload.size());
  std::vector<std::uint8_t> out = w.bytes();
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size())));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  return out;
}

/// Validates magic, version, length and checksum (in that order, so each
/// failure mode surfaces as its own error type) and returns a reader over
/// the payload.
inline ByteReader open_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                                 std::uint16_t version, const std::string& what) {
  if (bytes.size() < magic.size() ||
      std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    throw BadMagicError(what + ": missing '" + std::string(magic) + "' magic bytes");
  }
  ByteReader header(bytes, what);
  header.raw(magic.size());
  const std::uint16_t found = header.u16();
  if (found != version) {
    throw VersionError(what + ": unsupported version " + std::to_string(found) + " (expected " +
                       std::to_string(version) + ")");
  }
  const std::uint64_t length = header.u64();
  const std::size_t head = header.position();
  if (bytes.size() - head < 4 || length > bytes.size() - head - 4) {
    throw TruncatedError(what + ": file is truncated (" + std::to_string(bytes.size()) + " bytes, payload claims " +
                         std::to_string(length) + ")");
  }
  if (length != bytes.size() - head - 4) {
    throw FormatError(what + ": unexpected trailing bytes after payload");
  }
  ByteReader tail(bytes.subspan(head + length), what);
  const std::uint32_t stored = tail.u32();
  const auto actual = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(head + length)));
  if (stored != actual) throw ChecksumError(what + ": checksum mismatch, file is corrupted");
  return ByteReader(bytes.subspan(head, length), what);
}

}  // namespace vspcn::io

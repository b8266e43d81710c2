#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace updown {

/// Little-endian byte sink backing the binary file formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

/// Little-endian cursor over a byte buffer. Reading past the end throws
/// FormatError(truncated).
class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  float f32();
  double f64();
  std::string bytes(std::size_t n);
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::uint64_t get_le(int n);
  std::string data_;
  std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace updown

#include "updown/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "updown/errors.hpp"

namespace updown {

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }

std::uint64_t ByteReader::get_le(int n) {
  if (remaining() < static_cast<std::size_t>(n)) {
    throw FormatError(FormatErrorCode::truncated, "truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  }
  pos_ += n;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(get_le(8)); }

std::string ByteReader::bytes(std::size_t n) {
  if (remaining() < n) throw FormatError(FormatErrorCode::truncated, "truncated");
  std::string out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorCode::io, "write failed for " + path.string());
}

}  // namespace updown

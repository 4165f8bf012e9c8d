#include "cqkd/binary_io.hpp"

#include "cqkd/errors.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace cqkd::binary {

namespace {

template <typename UInt>
void put(std::vector<unsigned char>& buf, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

}  // namespace

void Writer::bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }
void Writer::u16(std::uint16_t v) { put(buf_, v); }
void Writer::u32(std::uint32_t v) { put(buf_, v); }
void Writer::u64(std::uint64_t v) { put(buf_, v); }
void Writer::f64(double v) { put(buf_, std::bit_cast<std::uint64_t>(v)); }

void Reader::require(std::size_t n) const {
  if (remaining() < n) throw TruncationError(pos_ + n, data_.size());
}

std::string Reader::bytes(std::size_t n) {
  require(n);
  std::string out(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return out;
}

namespace {

template <typename UInt>
UInt take(const std::vector<unsigned char>& data, std::size_t& pos) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(data[pos + i]) << (8 * i);
  pos += sizeof(UInt);
  return v;
}

}  // namespace

std::uint16_t Reader::u16() {
  require(2);
  return take<std::uint16_t>(data_, pos_);
}

std::uint32_t Reader::u32() {
  require(4);
  return take<std::uint32_t>(data_, pos_);
}

std::uint64_t Reader::u64() {
  require(8);
  return take<std::uint64_t>(data_, pos_);
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace cqkd::binary

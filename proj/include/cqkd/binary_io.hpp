#pragma once

// Little-endian encoding helpers shared by the checkpoint and dataset formats.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cqkd::binary {

class Writer {
 public:
  void bytes(std::string_view raw);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);

  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

/// Bounds-checked cursor; running off the end throws TruncationError.
class Reader {
 public:
  explicit Reader(std::vector<unsigned char> data) : data_(std::move(data)) {}

  std::string bytes(std::size_t n);
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();

  /// Throws TruncationError unless n more bytes are available.
  void require(std::size_t n) const;
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t size() const { return data_.size(); }

 private:
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

/// Whole-file I/O; failures throw IoError.
std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& data);

}  // namespace cqkd::binary

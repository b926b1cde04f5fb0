#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nnslicer {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Append-only little-endian byte sink.
class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <class T>
    requires std::is_trivially_copyable_v<T>
  void put(T v) {
    auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    buf_.insert(buf_.end(), raw.begin(), raw.end());
  }

  void floats(std::span<const float> v) {
    auto p = reinterpret_cast<const std::uint8_t*>(v.data());
    buf_.insert(buf_.end(), p, p + v.size_bytes());
  }

  void pad_to(std::size_t alignment) {
    while (buf_.size() % alignment) buf_.push_back(0);
  }

  std::size_t size() const noexcept { return buf_.size(); }
  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() && { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader over an in-memory file image.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data, std::string what = "file")
      : data_(data), what_(std::move(what)) {}

  template <class T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    need(sizeof(T));
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return std::bit_cast<T>(raw);
  }

  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::vector<float> floats(std::size_t n) {
    if (n > remaining() / sizeof(float)) throw FormatError(what_ + ": truncated payload");
    std::vector<float> out(n);
    std::memcpy(out.data(), data_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return out;
  }

  void expect_magic(std::string_view magic) {
    auto got = bytes(magic.size());
    if (std::memcmp(got.data(), magic.data(), magic.size()) != 0)
      throw FormatError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
  }

  void seek(std::size_t pos) {
    if (pos > data_.size()) throw FormatError(what_ + ": offset out of range");
    pos_ = pos;
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw FormatError(what_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                                           std::to_string(pos_) + ")");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  auto len = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> buf(len);
  if (len && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(len)))
    throw std::runtime_error("read failed: " + path.string());
  return buf;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace nnslicer

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace nvmeguard {

// Little-endian byte buffer writer.
class BinaryWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename T>
  void u(T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
  }

  void f64(double value) { u(std::bit_cast<std::uint64_t>(value)); }

  void str(std::string_view s) {
    u(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  [[nodiscard]] const std::vector<char>& buffer() const { return buf_; }

  void save(const std::filesystem::path& path) const;

 private:
  std::vector<char> buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::vector<char> data) : buf_(std::move(data)) {}
  static BinaryReader load(const std::filesystem::path& path);

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T u() {
    static_assert(std::is_unsigned_v<T>);
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  double f64() { return std::bit_cast<double>(u<std::uint64_t>()); }

  std::string str() { return bytes(u<std::uint32_t>()); }

  [[nodiscard]] bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw std::runtime_error("unexpected end of binary data");
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace nvmeguard

#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace nnslicer {

using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(std::span<const std::uint8_t> bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
    throw std::runtime_error("sha256 failed");
  return out;
}

inline std::string to_hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : d) {
    s += kHex[b >> 4];
    s += kHex[b & 15];
  }
  return s;
}

// Order-independent combination of sample digests: byte-wise addition mod 2^256.
inline Digest digest_sum(const Digest& a, const Digest& b) {
  Digest out{};
  unsigned carry = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    unsigned s = unsigned{a[i]} + unsigned{b[i]} + carry;
    out[i] = static_cast<std::uint8_t>(s & 0xff);
    carry = s >> 8;
  }
  return out;
}

}  // namespace nnslicer

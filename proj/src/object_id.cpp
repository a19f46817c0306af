#include "graphstore/object_id.hpp"

#include <openssl/evp.h>

#include "graphstore/error.hpp"

namespace graphstore {

namespace {

int hex_value(char c) noexcept {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

}  // namespace

ObjectId ObjectId::hash(std::string_view data) {
  Bytes out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != kSize) {
    throw Error(ErrorCode::IoError, "sha256 digest failed");
  }
  return ObjectId(out);
}

std::optional<ObjectId> ObjectId::from_hex(std::string_view hex) noexcept {
  if (hex.size() != kHexSize) return std::nullopt;
  Bytes b{};
  for (std::size_t i = 0; i < kSize; ++i) {
    int hi = hex_value(hex[2 * i]);
    int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    b[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return ObjectId(b);
}

ObjectId ObjectId::parse(std::string_view hex) {
  auto id = from_hex(hex);
  if (!id) throw Error(ErrorCode::ParseError, "invalid object id '" + std::string(hex) + "'");
  return *id;
}

ObjectId ObjectId::from_raw(std::string_view raw) {
  if (raw.size() != kSize) throw Error(ErrorCode::ParseError, "raw object id must be 32 bytes");
  Bytes b{};
  for (std::size_t i = 0; i < kSize; ++i) b[i] = static_cast<std::uint8_t>(raw[i]);
  return ObjectId(b);
}

std::string ObjectId::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(kHexSize, '0');
  for (std::size_t i = 0; i < kSize; ++i) {
    s[2 * i] = kDigits[bytes_[i] >> 4];
    s[2 * i + 1] = kDigits[bytes_[i] & 0xf];
  }
  return s;
}

bool ObjectId::is_zero() const noexcept {
  for (auto b : bytes_)
    if (b != 0) return false;
  return true;
}

}  // namespace graphstore

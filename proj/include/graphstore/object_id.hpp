#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace graphstore {

/// 256-bit content hash naming a stored object.
class ObjectId {
 public:
  static constexpr std::size_t kSize = 32;
  static constexpr std::size_t kHexSize = 64;
  using Bytes = std::array<std::uint8_t, kSize>;

  constexpr ObjectId() noexcept : bytes_{} {}
  explicit constexpr ObjectId(const Bytes& bytes) noexcept : bytes_(bytes) {}

  /// SHA-256 of `data`.
  static ObjectId hash(std::string_view data);

  /// Accepts exactly 64 lowercase hex characters.
  static std::optional<ObjectId> from_hex(std::string_view hex) noexcept;
  /// Like from_hex but throws ParseError.
  static ObjectId parse(std::string_view hex);
  static ObjectId from_raw(std::string_view raw);

  std::string hex() const;
  const Bytes& bytes() const noexcept { return bytes_; }
  std::string_view raw() const noexcept {
    return {reinterpret_cast<const char*>(bytes_.data()), bytes_.size()};
  }
  bool is_zero() const noexcept;

  friend auto operator<=>(const ObjectId&, const ObjectId&) = default;

 private:
  Bytes bytes_;
};

struct ObjectIdHash {
  std::size_t operator()(const ObjectId& id) const noexcept {
    std::size_t h;
    static_assert(sizeof(h) <= ObjectId::kSize);
    __builtin_memcpy(&h, id.bytes().data(), sizeof(h));
    return h;
  }
};

}  // namespace graphstore

template <>
struct std::hash<graphstore::ObjectId> : graphstore::ObjectIdHash {};

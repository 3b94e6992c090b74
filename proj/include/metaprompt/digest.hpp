#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace metaprompt {

/// 64-bit FNV-1a over raw bytes. Used to fingerprint weights, prompts and
/// configs; not a cryptographic hash.
class Digest {
 public:
  Digest& update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Digest& update(std::span<const double> values) {
    return update(std::as_bytes(values));
  }

  Digest& update(std::string_view text) {
    return update(std::as_bytes(std::span(text.data(), text.size())));
  }

  Digest& update(std::uint64_t value) {
    return update(std::as_bytes(std::span(&value, 1)));
  }

  std::uint64_t value() const { return state_; }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace metaprompt

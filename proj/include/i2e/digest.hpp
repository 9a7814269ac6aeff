#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace i2e {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::byte> data);
std::string sha256_hex(std::string_view data);

template <class T>
std::string sha256_of(std::span<const T> values) {
  return sha256_hex(std::as_bytes(values));
}

}  // namespace i2e

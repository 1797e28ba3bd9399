#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace distill {

/// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

/// Prefix of sha256_hex, used for short content-derived ids.
std::string short_digest(std::string_view bytes, std::size_t hex_chars = 12);

/// First 8 bytes of SHA-256, big-endian.
std::uint64_t digest_u64(std::string_view bytes);

}  // namespace distill

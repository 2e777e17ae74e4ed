#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tips {

using Bytes = std::vector<std::uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(const Bytes& b) { return std::string(b.begin(), b.end()); }

// Lowercase hex, no separators.
std::string hex_encode(const Bytes& data);
std::string hex_encode(const std::uint8_t* data, std::size_t len);

// Throws TipsError{MalformedInput} on odd length or non-hex characters.
Bytes hex_decode(std::string_view hex);

// Standard base64 with padding (RFC 4648 section 4).
std::string base64_encode(const Bytes& data);

// Throws TipsError{MalformedInput} on bad characters or bad padding.
Bytes base64_decode(std::string_view text);

}  // namespace tips

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gridauth {

// Unpadded base64url (RFC 4648 §5), the JWT wire alphabet.
std::string b64url_encode(const uint8_t *data, size_t len);
std::string b64url_encode(std::string_view s);
std::string b64url_encode(const std::vector<uint8_t> &v);

std::optional<std::vector<uint8_t>> b64url_decode(std::string_view s);
std::optional<std::string> b64url_decode_str(std::string_view s);

} // namespace gridauth

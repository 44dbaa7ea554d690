#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gridauth {

// Cryptographically random bytes (libsodium-backed).
std::vector<uint8_t> random_bytes(size_t n);

// base64url of n random bytes; used for opaque handles, codes and secrets.
std::string random_token(size_t nbytes = 32);

std::string random_hex(size_t nbytes);

std::string to_hex(const std::vector<uint8_t> &v);
std::vector<uint8_t> from_hex(const std::string &hex); // empty on parse failure

} // namespace gridauth

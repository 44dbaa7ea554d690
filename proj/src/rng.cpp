#include "gridauth/rng.hpp"

#include <sodium.h>
#include <stdexcept>

#include "gridauth/b64url.hpp"

namespace gridauth {

namespace {

void ensure_sodium() {
    static const int rc = sodium_init();
    if (rc < 0) throw std::runtime_error("libsodium initialization failed");
}

} // namespace

std::vector<uint8_t> random_bytes(size_t n) {
    ensure_sodium();
    std::vector<uint8_t> v(n);
    randombytes_buf(v.data(), v.size());
    return v;
}

std::string random_token(size_t nbytes) { return b64url_encode(random_bytes(nbytes)); }

std::string random_hex(size_t nbytes) { return to_hex(random_bytes(nbytes)); }

std::string to_hex(const std::vector<uint8_t> &v) {
    ensure_sodium();
    std::string out(v.size() * 2 + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), v.data(), v.size());
    out.resize(v.size() * 2);
    return out;
}

std::vector<uint8_t> from_hex(const std::string &hex) {
    ensure_sodium();
    std::vector<uint8_t> out(hex.size() / 2 + 1);
    size_t len = 0;
    if (sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(), nullptr, &len, nullptr) != 0) {
        return {};
    }
    out.resize(len);
    return out;
}

} // namespace gridauth

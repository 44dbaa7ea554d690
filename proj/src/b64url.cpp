#include "gridauth/b64url.hpp"

#include <array>

namespace gridauth {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

std::array<int8_t, 256> make_reverse_table() {
    std::array<int8_t, 256> t{};
    t.fill(-1);
    for (int i = 0; i < 64; i++) {
        t[static_cast<uint8_t>(kAlphabet[i])] = static_cast<int8_t>(i);
    }
    return t;
}

const std::array<int8_t, 256> kReverse = make_reverse_table();

} // namespace

std::string b64url_encode(const uint8_t *data, size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= len; i += 3) {
        uint32_t n = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(kAlphabet[(n >> 18) & 0x3f]);
        out.push_back(kAlphabet[(n >> 12) & 0x3f]);
        out.push_back(kAlphabet[(n >> 6) & 0x3f]);
        out.push_back(kAlphabet[n & 0x3f]);
    }
    if (len - i == 1) {
        uint32_t n = data[i] << 16;
        out.push_back(kAlphabet[(n >> 18) & 0x3f]);
        out.push_back(kAlphabet[(n >> 12) & 0x3f]);
    } else if (len - i == 2) {
        uint32_t n = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(kAlphabet[(n >> 18) & 0x3f]);
        out.push_back(kAlphabet[(n >> 12) & 0x3f]);
        out.push_back(kAlphabet[(n >> 6) & 0x3f]);
    }
    return out;
}

std::string b64url_encode(std::string_view s) {
    return b64url_encode(reinterpret_cast<const uint8_t *>(s.data()), s.size());
}

std::string b64url_encode(const std::vector<uint8_t> &v) { return b64url_encode(v.data(), v.size()); }

std::optional<std::vector<uint8_t>> b64url_decode(std::string_view s) {
    // Unpadded input only; length 4k+1 can never occur.
    if (s.size() % 4 == 1) return std::nullopt;
    std::vector<uint8_t> out;
    out.reserve(s.size() / 4 * 3 + 2);
    uint32_t acc = 0;
    int bits = 0;
    for (char c : s) {
        int8_t v = kReverse[static_cast<uint8_t>(c)];
        if (v < 0) return std::nullopt;
        acc = (acc << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((acc >> bits) & 0xff));
        }
    }
    // Leftover bits must be zero padding from the encoder.
    if (bits > 0 && (acc & ((1u << bits) - 1)) != 0) return std::nullopt;
    return out;
}

std::optional<std::string> b64url_decode_str(std::string_view s) {
    auto v = b64url_decode(s);
    if (!v) return std::nullopt;
    return std::string(v->begin(), v->end());
}

} // namespace gridauth

#include "gridauth/secondary.hpp"

#include <sodium.h>

#include "gridauth/rng.hpp"

namespace gridauth {

namespace {

std::string assertion_message(const std::string &principal, const std::string &realm, int64_t ts) {
    return "gridauth-secondary-v1\n" + principal + "\n" + realm + "\n" + std::to_string(ts);
}

} // namespace

SecondaryKeypair SecondaryKeypair::generate() {
    if (sodium_init() < 0) return {};
    unsigned char pk[crypto_sign_PUBLICKEYBYTES];
    unsigned char sk[crypto_sign_SECRETKEYBYTES];
    crypto_sign_keypair(pk, sk);
    SecondaryKeypair kp;
    kp.public_hex = to_hex(std::vector<uint8_t>(pk, pk + sizeof(pk)));
    kp.secret_hex = to_hex(std::vector<uint8_t>(sk, sk + sizeof(sk)));
    return kp;
}

nlohmann::json SecondaryAssertion::to_json() const {
    return {{"principal", principal},
            {"realm", realm},
            {"timestamp", timestamp},
            {"signature", signature_hex}};
}

Expected<SecondaryAssertion> SecondaryAssertion::from_json(const nlohmann::json &j) {
    SecondaryAssertion a;
    try {
        a.principal = j.at("principal").get<std::string>();
        a.realm = j.at("realm").get<std::string>();
        a.timestamp = j.at("timestamp").get<int64_t>();
        a.signature_hex = j.at("signature").get<std::string>();
    } catch (const nlohmann::json::exception &e) {
        return Error{"invalid_assertion", std::string("assertion decode: ") + e.what()};
    }
    return a;
}

Expected<SecondaryAssertion> sign_assertion(const std::string &principal, const std::string &realm,
                                            int64_t timestamp, const std::string &secret_hex) {
    auto sk = from_hex(secret_hex);
    if (sk.size() != crypto_sign_SECRETKEYBYTES) {
        return Error{"invalid_key", "secondary secret key must be " +
                                        std::to_string(crypto_sign_SECRETKEYBYTES) + " bytes"};
    }
    std::string msg = assertion_message(principal, realm, timestamp);
    unsigned char sig[crypto_sign_BYTES];
    crypto_sign_detached(sig, nullptr, reinterpret_cast<const unsigned char *>(msg.data()),
                         msg.size(), sk.data());
    SecondaryAssertion a;
    a.principal = principal;
    a.realm = realm;
    a.timestamp = timestamp;
    a.signature_hex = to_hex(std::vector<uint8_t>(sig, sig + sizeof(sig)));
    return a;
}

Status verify_assertion(const SecondaryAssertion &a, const std::string &public_hex, int64_t now,
                        int64_t window) {
    if (a.timestamp > now + window || a.timestamp < now - window) {
        return Error{"stale_timestamp", "assertion timestamp outside +/-" +
                                            std::to_string(window) + "s window"};
    }
    auto pk = from_hex(public_hex);
    auto sig = from_hex(a.signature_hex);
    if (pk.size() != crypto_sign_PUBLICKEYBYTES || sig.size() != crypto_sign_BYTES) {
        return Error{"bad_signature", "malformed key or signature"};
    }
    std::string msg = assertion_message(a.principal, a.realm, a.timestamp);
    if (crypto_sign_verify_detached(sig.data(),
                                    reinterpret_cast<const unsigned char *>(msg.data()), msg.size(),
                                    pk.data()) != 0) {
        return Error{"bad_signature", "assertion signature verification failed"};
    }
    return ok_status();
}

} // namespace gridauth

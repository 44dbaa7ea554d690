#pragma once

#include <memory>
#include <openssl/evp.h>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/expected.hpp"

namespace gridauth {

using EvpPkeyPtr = std::shared_ptr<EVP_PKEY>;

// Public signing key as published in a JWKS document. Carries only public
// parameters; to_json never emits private material because none is held.
struct Jwk {
    std::string kid;
    std::string alg; // ES256 | RS256
    std::string kty; // EC | RSA
    nlohmann::json params; // crv/x/y or n/e, base64url
    EvpPkeyPtr key;

    nlohmann::json to_json() const;
    static Expected<Jwk> from_json(const nlohmann::json &j);
};

// Private signing key held by an issuer. ES256 by default, RS256 supported.
struct SigningKey {
    std::string kid;
    std::string alg;
    EvpPkeyPtr key; // keypair

    static Expected<SigningKey> generate(const std::string &kid, const std::string &alg = "ES256");
    Expected<Jwk> public_jwk() const;
};

// Immutable set of public keys for one issuer; kids are unique.
class KeySet {
  public:
    Status add(Jwk jwk);
    const Jwk *find(const std::string &kid) const;
    size_t size() const { return keys_.size(); }
    const std::vector<Jwk> &keys() const { return keys_; }

    nlohmann::json to_jwks() const; // {"keys": [...]}
    static Expected<KeySet> from_jwks(const nlohmann::json &doc);

  private:
    std::vector<Jwk> keys_;
};

// Detached JOSE signature over signing_input (ES256: raw r||s, RS256: PKCS#1).
Expected<std::vector<uint8_t>> jose_sign(EVP_PKEY *key, const std::string &alg,
                                         std::string_view signing_input);
bool jose_verify(EVP_PKEY *key, const std::string &alg, std::string_view signing_input,
                 const std::vector<uint8_t> &signature);

} // namespace gridauth

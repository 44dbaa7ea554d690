#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "gridauth/expected.hpp"

namespace gridauth {

// Non-interactive re-authentication: a timestamped assertion signed with a
// principal's enrolled long-lived Ed25519 key. Stands in for the Kerberos /
// ssh-agent step of the production system.
struct SecondaryKeypair {
    std::string public_hex;
    std::string secret_hex;

    static SecondaryKeypair generate();
};

struct SecondaryAssertion {
    std::string principal;
    std::string realm; // experiment name
    int64_t timestamp = 0;
    std::string signature_hex;

    nlohmann::json to_json() const;
    static Expected<SecondaryAssertion> from_json(const nlohmann::json &j);
};

// Builds and signs an assertion for (principal, realm) at the given time.
Expected<SecondaryAssertion> sign_assertion(const std::string &principal, const std::string &realm,
                                            int64_t timestamp, const std::string &secret_hex);

// Checks the signature against the enrolled public key and the timestamp
// against the verifier's clock (|now - ts| <= window).
// Error codes: stale_timestamp, bad_signature.
Status verify_assertion(const SecondaryAssertion &a, const std::string &public_hex, int64_t now,
                        int64_t window);

} // namespace gridauth

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/claims.hpp"
#include "gridauth/expected.hpp"
#include "gridauth/keys.hpp"

namespace gridauth {

enum class VerifyErrc {
    malformed,
    unknown_key,
    bad_signature,
    wrong_issuer,
    expired,
    not_yet_valid,
    audience_mismatch,
    insufficient_scope,
};

const char *to_string(VerifyErrc e);

struct VerifyError {
    VerifyErrc kind;
    std::string message;
};

// Acceptance policy for verify(). An entry equal to kAnyAudience in
// audiences accepts every token audience, and a token carrying kAnyAudience
// is accepted by every policy.
struct VerifyPolicy {
    std::string issuer;
    std::vector<std::string> audiences = {kAnyAudience};
    std::vector<Scope> required_scopes;
    int64_t skew = 60;
};

// Serializes and signs the claims: header.payload.signature, base64url.
// Errors: invalid_claims (violated ClaimSet invariant), key_error.
Expected<std::string> mint(const ClaimSet &claims, const SigningKey &key);

// Offline verification: pure function of (token, keys, policy, now); never
// touches the network. Checks signature, issuer, validity window (with
// skew), audience intersection and that every required scope is subsumed by
// some token scope.
Expected<ClaimSet, VerifyError> verify(const std::string &token, const KeySet &keys,
                                       const VerifyPolicy &policy, int64_t now);

struct DecodedJwt {
    nlohmann::json header;
    nlohmann::json payload;
    std::string signing_input; // "header.payload" as transmitted
    std::vector<uint8_t> signature;
};

// Structural decode without any verification; for kid lookup and callers
// that only need a peek (e.g. expiry checks on their own tokens).
Expected<DecodedJwt> decode_unverified(const std::string &token);

} // namespace gridauth

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/expected.hpp"
#include "gridauth/scope.hpp"

namespace gridauth {

// Catch-all audience: tokens minted without an audience restriction carry
// this value, and a policy listing it accepts any audience.
inline const std::string kAnyAudience = "https://wlcg.cern.ch/jwt/v1/any";

inline const std::string kProfileVersion = "1.0";

// Decoded access-token claims. Wire names follow the common JWT profile:
// scope is a space-separated string, groups live in "wlcg.groups" and the
// profile version in "wlcg.ver".
struct ClaimSet {
    std::string iss;
    std::string sub;
    std::vector<std::string> aud;
    int64_t exp = 0;
    int64_t iat = 0;
    int64_t nbf = 0;
    std::string jti;
    std::vector<Scope> scopes;
    std::vector<std::string> groups; // slash-separated hierarchy, e.g. "/gm2/production"
    std::string ver = kProfileVersion;

    // Invariants: iat <= nbf <= exp and exp > iat.
    Status validate() const;

    nlohmann::json to_json() const;
    static Expected<ClaimSet> from_json(const nlohmann::json &payload);

    friend bool operator==(const ClaimSet &, const ClaimSet &) = default;
};

} // namespace gridauth

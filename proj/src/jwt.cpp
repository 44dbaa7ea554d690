#include "gridauth/jwt.hpp"

#include "gridauth/b64url.hpp"

namespace gridauth {

const char *to_string(VerifyErrc e) {
    switch (e) {
    case VerifyErrc::malformed: return "malformed";
    case VerifyErrc::unknown_key: return "unknown_key";
    case VerifyErrc::bad_signature: return "bad_signature";
    case VerifyErrc::wrong_issuer: return "wrong_issuer";
    case VerifyErrc::expired: return "expired";
    case VerifyErrc::not_yet_valid: return "not_yet_valid";
    case VerifyErrc::audience_mismatch: return "audience_mismatch";
    case VerifyErrc::insufficient_scope: return "insufficient_scope";
    }
    return "?";
}

Expected<std::string> mint(const ClaimSet &claims, const SigningKey &key) {
    if (auto s = claims.validate(); !s.ok()) return s.error();
    nlohmann::json header = {{"alg", key.alg}, {"kid", key.kid}, {"typ", "JWT"}};
    std::string signing_input =
        b64url_encode(header.dump()) + "." + b64url_encode(claims.to_json().dump());
    auto sig = jose_sign(key.key.get(), key.alg, signing_input);
    if (!sig.ok()) return sig.error();
    return signing_input + "." + b64url_encode(sig.value());
}

Expected<DecodedJwt> decode_unverified(const std::string &token) {
    auto dot1 = token.find('.');
    auto dot2 = token.find('.', dot1 == std::string::npos ? dot1 : dot1 + 1);
    if (dot1 == std::string::npos || dot2 == std::string::npos ||
        token.find('.', dot2 + 1) != std::string::npos) {
        return Error{"malformed", "token is not three dot-separated segments"};
    }
    auto header_raw = b64url_decode_str(token.substr(0, dot1));
    auto payload_raw = b64url_decode_str(token.substr(dot1 + 1, dot2 - dot1 - 1));
    auto sig = b64url_decode(token.substr(dot2 + 1));
    if (!header_raw || !payload_raw || !sig) {
        return Error{"malformed", "token segment is not valid base64url"};
    }
    DecodedJwt out;
    out.header = nlohmann::json::parse(*header_raw, nullptr, false);
    out.payload = nlohmann::json::parse(*payload_raw, nullptr, false);
    if (out.header.is_discarded() || out.payload.is_discarded() || !out.header.is_object() ||
        !out.payload.is_object()) {
        return Error{"malformed", "token segment is not a JSON object"};
    }
    out.signing_input = token.substr(0, dot2);
    out.signature = std::move(*sig);
    return out;
}

namespace {

bool audience_accepted(const std::vector<std::string> &token_aud,
                       const std::vector<std::string> &accepted) {
    for (const auto &a : accepted) {
        if (a == kAnyAudience) return true;
    }
    for (const auto &t : token_aud) {
        if (t == kAnyAudience) return true;
        for (const auto &a : accepted) {
            if (t == a) return true;
        }
    }
    return false;
}

} // namespace

Expected<ClaimSet, VerifyError> verify(const std::string &token, const KeySet &keys,
                                       const VerifyPolicy &policy, int64_t now) {
    auto decoded = decode_unverified(token);
    if (!decoded.ok()) {
        return VerifyError{VerifyErrc::malformed, decoded.error().message};
    }
    const auto &d = decoded.value();

    std::string kid = d.header.value("kid", "");
    std::string alg = d.header.value("alg", "");
    const Jwk *jwk = keys.find(kid);
    if (!jwk) {
        return VerifyError{VerifyErrc::unknown_key, "no key with kid '" + kid + "' in key set"};
    }
    if (alg != jwk->alg || (alg != "ES256" && alg != "RS256")) {
        return VerifyError{VerifyErrc::bad_signature,
                           "algorithm '" + alg + "' does not match key '" + kid + "'"};
    }
    if (!jose_verify(jwk->key.get(), alg, d.signing_input, d.signature)) {
        return VerifyError{VerifyErrc::bad_signature, "signature verification failed"};
    }

    auto claims = ClaimSet::from_json(d.payload);
    if (!claims.ok()) {
        return VerifyError{VerifyErrc::malformed, claims.error().message};
    }
    const ClaimSet &c = claims.value();

    if (c.iss != policy.issuer) {
        return VerifyError{VerifyErrc::wrong_issuer,
                           "issuer '" + c.iss + "' does not match '" + policy.issuer + "'"};
    }
    if (now > c.exp + policy.skew) {
        return VerifyError{VerifyErrc::expired, "token expired at " + std::to_string(c.exp)};
    }
    if (now < c.nbf - policy.skew) {
        return VerifyError{VerifyErrc::not_yet_valid,
                           "token not valid before " + std::to_string(c.nbf)};
    }
    if (!audience_accepted(c.aud, policy.audiences)) {
        return VerifyError{VerifyErrc::audience_mismatch, "no acceptable audience in token"};
    }
    for (const auto &req : policy.required_scopes) {
        if (!subsumes_any(c.scopes, req)) {
            return VerifyError{VerifyErrc::insufficient_scope,
                               "token lacks required scope " + req.str()};
        }
    }
    return c;
}

} // namespace gridauth

#include "gridauth/claims.hpp"

namespace gridauth {

Status ClaimSet::validate() const {
    if (!(iat <= nbf)) return Error{"invalid_claims", "iat must be <= nbf"};
    if (!(nbf <= exp)) return Error{"invalid_claims", "nbf must be <= exp"};
    if (!(exp > iat)) return Error{"invalid_claims", "exp must be > iat"};
    return ok_status();
}

nlohmann::json ClaimSet::to_json() const {
    nlohmann::json j;
    j["iss"] = iss;
    j["sub"] = sub;
    if (aud.size() == 1) {
        j["aud"] = aud[0];
    } else {
        j["aud"] = aud;
    }
    j["exp"] = exp;
    j["iat"] = iat;
    j["nbf"] = nbf;
    j["jti"] = jti;
    j["scope"] = scope_claim(scopes);
    if (!groups.empty()) j["wlcg.groups"] = groups;
    j["wlcg.ver"] = ver;
    return j;
}

Expected<ClaimSet> ClaimSet::from_json(const nlohmann::json &p) {
    ClaimSet c;
    try {
        c.iss = p.value("iss", "");
        c.sub = p.value("sub", "");
        if (p.contains("aud")) {
            if (p["aud"].is_string()) {
                c.aud = {p["aud"].get<std::string>()};
            } else {
                c.aud = p["aud"].get<std::vector<std::string>>();
            }
        }
        c.exp = p.value("exp", int64_t{0});
        c.iat = p.value("iat", int64_t{0});
        c.nbf = p.value("nbf", c.iat);
        c.jti = p.value("jti", "");
        if (p.contains("scope")) {
            auto scopes = parse_scope_claim(p["scope"].get<std::string>());
            if (!scopes.ok()) return scopes.error();
            c.scopes = scopes.value();
        }
        if (p.contains("wlcg.groups")) {
            c.groups = p["wlcg.groups"].get<std::vector<std::string>>();
        }
        c.ver = p.value("wlcg.ver", kProfileVersion);
    } catch (const nlohmann::json::exception &e) {
        return Error{"invalid_claims", std::string("claim decode: ") + e.what()};
    }
    return c;
}

} // namespace gridauth

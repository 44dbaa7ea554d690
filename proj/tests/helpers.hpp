#pragma once

// Shared test helpers: independent oracles and randomized generators. The
// oracles deliberately use different algorithms from the library code they
// check.

#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gridauth/claims.hpp"
#include "gridauth/scope.hpp"

namespace testutil {

// Independent base64url decoder: per-character alphabet search, bit cursor.
inline std::optional<std::string> oracle_b64url_decode(const std::string &in) {
    static const std::string alpha =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
    std::vector<int> sextets;
    for (char c : in) {
        auto pos = alpha.find(c);
        if (pos == std::string::npos) return std::nullopt;
        sextets.push_back(static_cast<int>(pos));
    }
    std::string out;
    int acc = 0, nbits = 0;
    for (int v : sextets) {
        acc = (acc << 6) | v;
        nbits += 6;
        if (nbits >= 8) {
            nbits -= 8;
            out.push_back(static_cast<char>((acc >> nbits) & 0xff));
        }
    }
    return out;
}

// Path split oracle: "/a/b" -> ["a","b"], "/" -> [].
inline std::vector<std::string> split_segments(const std::string &path) {
    std::vector<std::string> segs;
    std::string cur;
    for (size_t i = 1; i < path.size(); i++) {
        if (path[i] == '/') {
            segs.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(path[i]);
        }
    }
    if (!cur.empty() || (!path.empty() && path.back() == '/' && path.size() > 1)) {
        segs.push_back(cur);
    }
    return segs;
}

// Subsumption oracle: equal authz and granted's segment list is a prefix of
// requested's (pathless handled separately).
inline bool oracle_subsumes(const gridauth::Scope &granted, const gridauth::Scope &requested) {
    if (granted.authz != requested.authz) return false;
    if (!granted.has_path() && !requested.has_path()) return true;
    if (!granted.has_path() || !requested.has_path()) return false;
    auto g = split_segments(granted.path);
    auto r = split_segments(requested.path);
    if (g.size() > r.size()) return false;
    for (size_t i = 0; i < g.size(); i++) {
        if (g[i] != r[i]) return false;
    }
    return true;
}

inline gridauth::Scope random_scope(std::mt19937 &rng) {
    static const gridauth::Authz kAll[] = {
        gridauth::Authz::compute_create, gridauth::Authz::compute_read,
        gridauth::Authz::compute_modify, gridauth::Authz::compute_cancel,
        gridauth::Authz::storage_read,   gridauth::Authz::storage_create,
        gridauth::Authz::storage_modify,
    };
    static const char *kSegs[] = {"a", "b", "ab", "dune", "gm2", "data", "raw", "run1"};
    gridauth::Scope s;
    s.authz = kAll[rng() % 7];
    if (gridauth::is_storage(s.authz) && rng() % 4 != 0) {
        int depth = static_cast<int>(rng() % 4); // 0 = "/"
        std::string path = "/";
        for (int i = 0; i < depth; i++) {
            if (i > 0) path += "/";
            path += kSegs[rng() % 8];
        }
        s.path = path;
    }
    return s;
}

inline std::vector<gridauth::Scope> random_scope_set(std::mt19937 &rng, size_t max_n = 4) {
    std::vector<gridauth::Scope> out;
    size_t n = rng() % (max_n + 1);
    for (size_t i = 0; i < n; i++) {
        auto s = random_scope(rng);
        bool dup = false;
        for (const auto &e : out) {
            if (e == s) dup = true;
        }
        if (!dup) out.push_back(s);
    }
    return out;
}

inline gridauth::ClaimSet random_claims(std::mt19937 &rng) {
    static const char *kIss[] = {"https://issuer.test/dune", "https://issuer.test/fermilab",
                                 "https://issuer.test/icarus"};
    static const char *kSub[] = {"alice", "bob", "carol", "dunepro"};
    gridauth::ClaimSet c;
    c.iss = kIss[rng() % 3];
    c.sub = kSub[rng() % 4];
    c.aud = {gridauth::kAnyAudience};
    if (rng() % 3 == 0) c.aud.push_back("https://service.test/" + std::to_string(rng() % 10));
    c.iat = 1'700'000'000 + static_cast<int64_t>(rng() % 1000);
    c.nbf = c.iat + static_cast<int64_t>(rng() % 5);
    c.exp = c.nbf + 1 + static_cast<int64_t>(rng() % 10800);
    c.jti = "jti-" + std::to_string(rng());
    c.scopes = random_scope_set(rng);
    c.groups = {"/gm2"};
    if (rng() % 2) c.groups.push_back("/gm2/production");
    return c;
}

} // namespace testutil

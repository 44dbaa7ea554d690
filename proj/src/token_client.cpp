#include "gridauth/token_client.hpp"

#include <unistd.h>

#include <cstdio>
#include <filesystem>

#include "httplib.h"

#include "gridauth/claims.hpp"
#include "gridauth/fsutil.hpp"
#include "gridauth/http_util.hpp"
#include "gridauth/jwt.hpp"
#include "gridauth/secondary.hpp"

namespace gridauth {

using nlohmann::json;

Environment Environment::from_process() {
    Environment env;
    for (const char *name : {"BEARER_TOKEN", "BEARER_TOKEN_FILE", "XDG_RUNTIME_DIR",
                             "GRIDAUTH_CRED_DIR", "TOKEN_BROKER", "USER", "TMPDIR"}) {
        if (const char *v = ::getenv(name)) env.vars[name] = v;
    }
    env.uid = static_cast<int>(::getuid());
    if (!env.get("TMPDIR").empty()) env.tmp_dir = env.get("TMPDIR");
    return env;
}

TokenFileLayout TokenFileLayout::from_env(const Environment &env) {
    TokenFileLayout layout;
    layout.uid = env.uid;
    layout.runtime_dir = env.get("XDG_RUNTIME_DIR");
    if (layout.runtime_dir.empty()) layout.runtime_dir = env.tmp_dir;
    layout.cred_dir = env.get("GRIDAUTH_CRED_DIR");
    if (layout.cred_dir.empty()) layout.cred_dir = layout.runtime_dir;
    return layout;
}

std::string TokenFileLayout::access_path() const {
    return runtime_dir + "/bt_u" + std::to_string(uid);
}

std::string TokenFileLayout::broker_path(const std::string &experiment, const std::string &role,
                                         const std::string &credkey) const {
    std::string name = "vt_u" + std::to_string(uid) + "-" + experiment;
    if (!role.empty()) name += "-" + role;
    if (!credkey.empty()) name += "-" + credkey;
    return cred_dir + "/" + name;
}

namespace {

std::string strip_ws(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
    size_t i = 0;
    while (i < s.size() && (s[i] == '\n' || s[i] == '\r' || s[i] == ' ')) ++i;
    return s.substr(i);
}

std::optional<DiscoveredToken> from_file(const std::string &path, const std::string &source) {
    auto text = read_file(path);
    if (!text) return std::nullopt;
    std::string tok = strip_ws(*text);
    if (tok.empty()) return std::nullopt;
    return DiscoveredToken{tok, source, path};
}

} // namespace

std::optional<DiscoveredToken> discover_bearer(const Environment &env) {
    if (!env.get("BEARER_TOKEN").empty())
        return DiscoveredToken{env.get("BEARER_TOKEN"), "bearer-env", ""};
    if (!env.get("BEARER_TOKEN_FILE").empty()) {
        if (auto d = from_file(env.get("BEARER_TOKEN_FILE"), "bearer-file")) return d;
        return std::nullopt; // an explicit pointer to a missing file: stop here
    }
    std::string name = "bt_u" + std::to_string(env.uid);
    if (!env.get("XDG_RUNTIME_DIR").empty()) {
        if (auto d = from_file(env.get("XDG_RUNTIME_DIR") + "/" + name, "runtime-file")) return d;
    }
    return from_file(env.tmp_dir + "/" + name, "tmp-file");
}

namespace {

struct BrokerHttp {
    std::string base;

    Expected<json> post(const std::string &path, const json &body) {
        return http_post_json(base, path, body);
    }
    Expected<json> get(const std::string &path) { return http_get_json(base, path); }
};

// Scope/audience/lifetime sufficiency of an already-held token.
bool satisfies(const ClaimSet &claims, const std::string &experiment,
               const std::vector<Scope> &requested, const std::string &audience, int64_t now) {
    if (claims.exp - now <= 60) return false;
    // The token must belong to this experiment's grant, not a neighbor's.
    bool ours = false;
    for (const auto &g : claims.groups) {
        if (g == "/" + experiment || g.rfind("/" + experiment + "/", 0) == 0) ours = true;
    }
    if (!ours) return false;
    for (const auto &want : requested) {
        if (!subsumes_any(claims.scopes, want)) return false;
    }
    if (!audience.empty()) {
        bool aud_ok = false;
        for (const auto &a : claims.aud) aud_ok = aud_ok || a == audience || a == kAnyAudience;
        if (!aud_ok) return false;
    }
    return true;
}

Expected<ClaimSet> peek_claims(const std::string &token) {
    auto dec = decode_unverified(token);
    if (!dec.ok()) return dec.error();
    return ClaimSet::from_json(dec.value().payload);
}

Status write_access_file(const std::string &path, const std::string &token) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        if (auto s = ensure_dir(p.parent_path().string()); !s.ok())
            return Error{"io_error", s.error().message};
    }
    // Exactly the compact token plus a trailing newline, owner-only.
    if (auto s = write_file_atomic(path, token + "\n", 0600); !s.ok())
        return Error{"io_error", s.error().message};
    return ok_status();
}

} // namespace

int exit_code_for(const Error &e) {
    if (e.code == "auth_required") return 2;
    if (e.code == "downscope_refused") return 3;
    if (e.code == "network") return 4;
    return 1;
}

Expected<GetTokenResult> get_token(const ClientOptions &opts, const Environment &env,
                                   const ClockPtr &clock) {
    if (opts.experiment.empty())
        return Error{"invalid_request", "an experiment must be named"};
    auto requested = parse_scope_list(opts.scopes_text);
    if (!requested.ok())
        return Error{"invalid_request", requested.error().message};

    const int64_t now = clock->now();
    TokenFileLayout layout = TokenFileLayout::from_env(env);
    GetTokenResult result;
    result.access_path = opts.out_path.empty() ? layout.access_path() : opts.out_path;
    result.broker_path = layout.broker_path(opts.experiment, opts.role, opts.credkey);

    // 1) A token already on disk (or in the environment) that satisfies the
    //    request is the whole answer: no network traffic at all.
    if (auto found = discover_bearer(env)) {
        if (auto claims = peek_claims(found->token);
            claims.ok() &&
            satisfies(claims.value(), opts.experiment, requested.value(), opts.audience, now)) {
            result.access_token = found->token;
            result.source = "cached";
            result.expires_at = claims.value().exp;
            result.scopes = claims.value().scopes;
            if (!found->path.empty()) result.access_path = found->path;
            return result;
        }
    }

    std::string broker_url = opts.broker_url.empty() ? env.get("TOKEN_BROKER") : opts.broker_url;
    if (broker_url.empty())
        return Error{"invalid_request", "no broker address (flag or TOKEN_BROKER)"};
    BrokerHttp broker{broker_url};

    auto finish = [&](const std::string &token, const std::string &source)
        -> Expected<GetTokenResult> {
        auto claims = peek_claims(token);
        if (!claims.ok()) return Error{"network", "broker returned a malformed token"};
        result.access_token = token;
        result.source = source;
        result.expires_at = claims.value().exp;
        result.scopes = claims.value().scopes;
        if (opts.out_path != "-") {
            if (auto s = write_access_file(result.access_path, token); !s.ok())
                return s.error();
        }
        return result;
    };

    auto exchange_with = [&](const std::string &secret) -> Expected<json> {
        json body{{"broker_token", secret}};
        if (!opts.scopes_text.empty()) body["scopes"] = opts.scopes_text;
        if (!opts.audience.empty()) body["audience"] = opts.audience;
        auto out = broker.post("/v1/token/exchange", body);
        if (!out.ok() && out.error().code == "invalid_scope")
            return Error{"downscope_refused", out.error().message};
        return out;
    };

    auto store_broker_token = [&](const json &bt) -> Status {
        json rec{{"secret", bt.at("broker_token").get<std::string>()},
                 {"expires_at", bt.value("expires_at", int64_t{0})},
                 {"experiment", opts.experiment},
                 {"role", opts.role},
                 {"principal", bt.value("principal", opts.principal)},
                 {"broker_url", broker_url}};
        std::filesystem::path p(result.broker_path);
        if (p.has_parent_path()) {
            if (auto s = ensure_dir(p.parent_path().string()); !s.ok())
                return Error{"io_error", s.error().message};
        }
        if (auto s = write_file_atomic(result.broker_path, rec.dump(2) + "\n", 0600); !s.ok())
            return Error{"io_error", s.error().message};
        return ok_status();
    };

    // 2) A stored broker token that has not expired is exchanged directly.
    if (auto text = read_file(result.broker_path)) {
        json rec = json::parse(*text, nullptr, false);
        if (rec.is_object() && rec.value("expires_at", int64_t{0}) > now &&
            rec.contains("secret")) {
            auto out = exchange_with(rec["secret"].get<std::string>());
            if (out.ok())
                return finish(out.value().at("access_token").get<std::string>(), "exchanged");
            const std::string &code = out.error().code;
            if (code == "downscope_refused" || code == "network" || code == "rate_limited" ||
                code == "issuer_unreachable")
                return out.error();
            // broker_token_unknown/expired, bootstrap_required: fall through.
        }
    }

    // 3) An enrolled secondary key renews the broker token with no browser.
    if (!opts.secondary_key_file.empty()) {
        auto text = read_file(opts.secondary_key_file);
        if (!text) return Error{"invalid_request", "cannot read " + opts.secondary_key_file};
        json keydoc = json::parse(*text, nullptr, false);
        if (!keydoc.is_object() || !keydoc.contains("secret_hex"))
            return Error{"invalid_request", "secondary key file must carry secret_hex"};
        std::string principal = keydoc.value("principal", opts.principal);
        auto assertion = sign_assertion(principal, opts.experiment, now,
                                        keydoc["secret_hex"].get<std::string>());
        if (!assertion.ok()) return Error{"invalid_request", assertion.error().message};
        auto renewed = broker.post("/v1/auth/secondary",
                                   json{{"assertion", assertion.value().to_json()},
                                        {"experiment", opts.experiment},
                                        {"role", opts.role}});
        if (renewed.ok()) {
            if (auto s = store_broker_token(renewed.value()); !s.ok()) return s.error();
            auto out = exchange_with(renewed.value().at("broker_token").get<std::string>());
            if (!out.ok()) return out.error();
            return finish(out.value().at("access_token").get<std::string>(), "renewed");
        }
        if (renewed.error().code == "network") return renewed.error();
        if (!opts.allow_bootstrap)
            return Error{"auth_required", "renewal failed (" + renewed.error().code +
                                              ") and interactive sign-in is disabled"};
        // bootstrap_required and friends: fall through to the browser flow.
    }

    // 4) Interactive bootstrap.
    if (!opts.allow_bootstrap)
        return Error{"auth_required", "no usable token and interactive sign-in is disabled"};
    std::string principal = opts.principal.empty() ? env.get("USER") : opts.principal;
    if (principal.empty()) principal = "u" + std::to_string(env.uid);
    auto begun = broker.post("/v1/auth/oidc/begin", json{{"principal", principal},
                                                         {"experiment", opts.experiment},
                                                         {"role", opts.role}});
    if (!begun.ok()) return begun.error();
    const std::string handle = begun.value().at("handle").get<std::string>();
    const std::string auth_url = begun.value().at("auth_url").get<std::string>();
    if (!opts.quiet)
        std::fprintf(stderr, "Complete the sign-in in your browser:\n  %s\n", auth_url.c_str());
    if (opts.browse) opts.browse(auth_url);

    json done;
    for (int attempt = 0;; ++attempt) {
        auto polled = broker.get("/v1/auth/oidc/poll/" + handle);
        if (!polled.ok()) return polled.error();
        const std::string status = polled.value().value("status", std::string());
        if (status == "complete") {
            done = polled.value();
            break;
        }
        if (status == "denied") return Error{"auth_required", "consent was denied"};
        if (status == "expired") return Error{"auth_required", "sign-in timed out"};
        if (attempt + 1 >= opts.poll_attempts)
            return Error{"auth_required", "gave up waiting for consent"};
        opts.wait(opts.poll_interval_ms);
    }

    if (auto s = store_broker_token(done); !s.ok()) return s.error();
    // The bootstrap bundles a full-grant access token; an explicit scope or
    // audience request still goes through a proper downscoping exchange.
    if (opts.scopes_text.empty() && opts.audience.empty() && done.contains("access_token")) {
        return finish(done["access_token"].get<std::string>(), "bootstrapped");
    }
    auto out = exchange_with(done.at("broker_token").get<std::string>());
    if (!out.ok()) return out.error();
    return finish(out.value().at("access_token").get<std::string>(), "bootstrapped");
}

} // namespace gridauth

#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "gridauth/clock.hpp"
#include "gridauth/expected.hpp"
#include "gridauth/http_util.hpp"
#include "gridauth/jwt.hpp"
#include "gridauth/keys.hpp"
#include "gridauth/lifetimes.hpp"
#include "gridauth/scope.hpp"

namespace httplib {
class Server;
}

namespace gridauth {

struct ClientRegistration {
    std::string client_id;
    std::string client_secret; // >= 32 random bytes, base64url
    std::string issuer_name;
};

struct RefreshTokenRecord {
    std::string handle; // >= 32 random bytes, opaque
    std::string principal;
    std::string issuer_name;
    std::string experiment;
    std::string role;
    std::vector<Scope> granted;
    std::vector<std::string> groups;
    int64_t issued_at = 0;
    int64_t expires_at = 0; // issued_at + refresh lifetime
    bool renewable = true;
    std::string client_id;
};

struct AuthCodeRecord {
    std::string code;
    std::string client_id;
    std::string issuer_name;
    std::string principal;
    std::string experiment;
    std::string role;
    std::vector<Scope> scopes;
    std::vector<std::string> groups;
    int64_t expiry = 0; // issued + auth_code lifetime
    bool redeemed = false;
};

// Multi-tenant OIDC-style token issuer. Each configured issuer lives under
// base_url + "/" + name with its own signing keys, registered clients, and
// the (experiment, role) -> scopes/groups table derived from the registry.
class IssuerService {
  public:
    struct Options {
        std::string base_url; // no trailing slash; set after the port is bound
        Lifetimes lifetimes;
        bool auto_approve = false; // GET /authorize issues the code directly
        std::string log_path;
        std::string key_alg = "ES256";
    };

    IssuerService(Options opts, ClockPtr clock);

    // Builds issuer tenants from the registry's generated issuer config
    // (array of {name, experiments, entries:[{experiment, role, scopes,
    // groups}]}). Fresh tenants get one signing key each.
    Status configure(const nlohmann::json &issuers_config);

    // Learns user -> (experiment, role) assignments from the registry's
    // directory document (part 1).
    Status set_directory(const nlohmann::json &directory);

    // One registration per (client id, issuer); returns the generated secret.
    Expected<std::string> register_client(const std::string &issuer, const std::string &client_id);

    // Generates a new signing key; prior public keys stay published.
    Status rotate_key(const std::string &issuer);

    Expected<nlohmann::json> discovery(const std::string &issuer) const;
    Expected<nlohmann::json> jwks(const std::string &issuer) const;

    // Consent decision for (principal, experiment, role); returns the
    // single-use authorization code.
    // Error codes: unknown_issuer, unknown_client, access_denied.
    Expected<std::string> authorize(const std::string &issuer, const std::string &client_id,
                                    const std::string &principal, const std::string &experiment,
                                    const std::string &role, bool approve);

    // OAuth2-style token endpoint. Form fields: grant_type
    // (authorization_code | refresh_token | refresh_token_renewal), code,
    // refresh_token, scope, audience, client_id, client_secret.
    // Errors use OAuth2 codes: invalid_client, invalid_grant, invalid_scope,
    // unsupported_grant_type.
    Expected<nlohmann::json> token_grant(const std::string &issuer,
                                         const std::map<std::string, std::string> &form);

    // GET /{name}/.well-known/openid-configuration, /{name}/jwks,
    // GET+POST /{name}/authorize, POST /{name}/token.
    void attach(httplib::Server &srv);

    std::string issuer_url(const std::string &issuer) const;

    // In-process introspection (never exposed over HTTP).
    size_t refresh_record_count() const;
    std::vector<std::string> refresh_handles() const;
    std::optional<RefreshTokenRecord> refresh_record(const std::string &handle) const;
    Expected<std::string> seed_refresh_record(const std::string &issuer,
                                              const std::string &client_id,
                                              const std::string &principal,
                                              const std::string &experiment,
                                              const std::string &role,
                                              const std::vector<Scope> &granted);
    std::vector<std::string> issuer_names() const;

  private:
    struct EntryCfg {
        std::vector<Scope> scopes;
        std::vector<std::string> groups;
    };
    struct Tenant {
        std::string name;
        SigningKey signing; // current private key
        KeySet published;   // public keys, including rotated-out ones
        int key_seq = 1;
        std::map<std::string, std::string> clients;               // id -> secret
        std::map<std::pair<std::string, std::string>, EntryCfg> entries; // (exp, role)
    };

    Expected<nlohmann::json> redeem_code(Tenant &tenant, const std::string &client_id,
                                         const std::map<std::string, std::string> &form);
    Expected<nlohmann::json> exchange_refresh(Tenant &tenant, const std::string &client_id,
                                              const std::map<std::string, std::string> &form);
    Expected<nlohmann::json> renew_refresh(Tenant &tenant, const std::string &client_id,
                                           const std::map<std::string, std::string> &form);
    Expected<std::string> mint_access(const Tenant &tenant, const std::string &principal,
                                      const std::vector<Scope> &scopes,
                                      const std::vector<std::string> &groups,
                                      const std::string &audience);
    // Erases any record for the same (principal, issuer, role, client) before
    // inserting, so at most one valid handle exists per tuple.
    std::string insert_record(RefreshTokenRecord rec);

    Options opts_;
    ClockPtr clock_;
    LineLog log_;
    mutable std::mutex mu_;
    std::map<std::string, Tenant> tenants_;
    std::set<std::tuple<std::string, std::string, std::string>> assignments_;
    std::map<std::string, AuthCodeRecord> codes_;
    std::map<std::string, RefreshTokenRecord> records_;
};

} // namespace gridauth

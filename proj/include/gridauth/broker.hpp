#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/clock.hpp"
#include "gridauth/expected.hpp"
#include "gridauth/http_util.hpp"
#include "gridauth/lifetimes.hpp"
#include "gridauth/rate_limiter.hpp"
#include "gridauth/registry.hpp"
#include "gridauth/secondary.hpp"
#include "gridauth/secret_store.hpp"

namespace httplib {
class Server;
}

namespace gridauth {

// Effective broker configuration. Every experiment appears under its own
// name even when several share one upstream issuer, so each experiment
// appears to have its own token issuer.
struct BrokerConfig {
    struct ExperimentCfg {
        std::string experiment;
        std::string issuer;     // upstream issuer name
        std::string issuer_url; // upstream issuer base URL
        std::string client_id;
        std::string client_secret;
        std::vector<std::string> roles;
        std::string realm;                                  // secondary-auth realm
        std::map<std::string, std::string> secondary_keys; // principal -> public key hex

        nlohmann::json to_json() const;
    };

    std::map<std::string, ExperimentCfg> experiments;
    int rate_limit_per_min = 60;
    std::vector<std::string> ha_servers; // empty (single node) or exactly 3
    Lifetimes lifetimes;

    // Errors: invalid_config (with the offending path in the message).
    static Expected<BrokerConfig> parse(const nlohmann::json &doc);
    nlohmann::json to_json() const; // canonical effective form
};

// Exact deltas between two effective configs, by config path
// ("experiments/<name>", "rate_limit_per_min", ...). Empty report iff the
// effective configs are byte-identical.
struct ChangeReport {
    std::vector<std::string> added;
    std::vector<std::string> removed;
    std::vector<std::string> modified;

    bool empty() const { return added.empty() && removed.empty() && modified.empty(); }
    nlohmann::json to_json() const;
};

ChangeReport diff_configs(const BrokerConfig &before, const BrokerConfig &after);

// Refresh-token broker: holds refresh tokens in an encrypted store, vends
// 7-day broker tokens after an OIDC bootstrap or a secondary-key assertion,
// and exchanges stored refresh tokens for short-lived access tokens.
class BrokerService {
  public:
    struct Options {
        std::string data_dir;       // secrets.enc + enrolled.json live here
        std::string master_key_hex; // seals the secret store
        std::string base_url;       // this broker's public URL (after bind)
        ApiTrust admin_trust;       // who may call /v1/admin/*
        Scope admin_scope;          // scope required on admin calls
        std::string log_path;
        int64_t session_ttl = 900;
        int64_t assertion_window = 300;
        int max_sessions_per_principal = 5;
    };

    BrokerService(Options opts, ClockPtr clock);

    // Opens the secret store and applies the initial config document.
    Status init(const nlohmann::json &config_doc);

    // Validates the new document; on success applies only the differences
    // (removed experiments lose their stored secrets) and returns the exact
    // deltas. On failure the old config stays live.
    Expected<ChangeReport> apply_config(const nlohmann::json &config_doc);

    // --- bootstrap (interactive OIDC) ---
    // Returns {handle, auth_url}: the user visits auth_url in a browser; the
    // issuer redirects back to this broker's callback.
    // Errors: unknown_experiment, unknown_role, too_many_sessions.
    Expected<nlohmann::json> bootstrap_begin(const std::string &principal,
                                             const std::string &experiment,
                                             const std::string &role);

    // {status: pending|complete|denied|expired, ...}; complete carries
    // broker_token + access_token. Error: unknown_handle.
    Expected<nlohmann::json> bootstrap_poll(const std::string &handle);

    // The issuer redirect target; redeems the code and stores the refresh
    // token. Returns a small HTML page for the browser.
    Expected<std::string> handle_callback(const std::string &state, const std::string &code,
                                          const std::string &oauth_error);

    // --- unattended renewal ---
    // Verifies the signed timestamp assertion against the enrolled key and
    // rotates the stored refresh token at the issuer; returns a fresh broker
    // token. Errors: unknown_experiment, not_enrolled, stale_timestamp,
    // bad_signature, bootstrap_required, issuer_unreachable.
    Expected<nlohmann::json> renew(const SecondaryAssertion &assertion,
                                   const std::string &experiment, const std::string &role);

    // --- exchange ---
    // scopes_text: space/comma-separated scope list ("" = full grant);
    // audience: "" = catch-all. Errors: broker_token_unknown,
    // broker_token_expired, rate_limited (message = retry-after seconds),
    // invalid_scope (passed through), bootstrap_required, issuer_unreachable.
    Expected<nlohmann::json> exchange(const std::string &broker_secret,
                                      const std::string &scopes_text,
                                      const std::string &audience);

    // --- robot onboarding ---
    // Requires an admin bearer token; the session must have completed a
    // bootstrap for exactly (principal, experiment, role). Enrolls the
    // robot's secondary public key. Errors: access_denied, invalid_session,
    // duplicate_record.
    Expected<nlohmann::json> store_for_robot(const std::string &admin_token,
                                             const std::string &principal,
                                             const std::string &experiment,
                                             const std::string &role,
                                             const std::string &session_handle,
                                             const std::string &secondary_public_hex);

    nlohmann::json health() const;

    void attach(httplib::Server &srv);

    void set_base_url(const std::string &url);

    // Counters and introspection for tests.
    int64_t sessions_created() const;
    int64_t requests_served() const;
    size_t stored_secret_count() const;
    BrokerConfig config_snapshot() const;

  private:
    struct Session {
        std::string handle;
        std::string state;
        std::string principal;
        std::string experiment;
        std::string role;
        int64_t created_at = 0;
        std::string status = "pending"; // pending | complete | denied
        nlohmann::json result;          // when complete
    };

    static std::string record_key(const std::string &experiment, const std::string &role,
                                  const std::string &principal);
    bool session_expired(const Session &s) const;
    std::optional<std::string> enrolled_key(const std::string &experiment,
                                            const std::string &principal) const;
    Status persist_enrolled();
    Status load_enrolled();
    nlohmann::json mint_broker_token(const std::string &experiment, const std::string &role,
                                     const std::string &principal);
    // POSTs the form to the experiment's issuer token endpoint. Maps
    // transport failure to issuer_unreachable.
    Expected<nlohmann::json> issuer_post(const BrokerConfig::ExperimentCfg &cfg,
                                         std::multimap<std::string, std::string> params);

    Options opts_;
    ClockPtr clock_;
    LineLog log_;
    mutable std::mutex mu_;
    BrokerConfig config_;
    std::optional<SecretStore> store_;
    std::map<std::string, Session> sessions_;       // handle -> session
    std::map<std::string, std::string> by_state_;   // state -> handle
    struct TokenRec {
        std::string experiment;
        std::string role;
        std::string principal;
        int64_t issued_at = 0;
        int64_t expires_at = 0;
    };
    std::map<std::string, TokenRec> broker_tokens_; // secret -> record
    std::map<std::string, std::string> enrolled_;   // experiment|principal -> public hex
    RateLimiter limiter_;
    int64_t sessions_created_ = 0;
    std::atomic<int64_t> requests_served_{0};
};

} // namespace gridauth

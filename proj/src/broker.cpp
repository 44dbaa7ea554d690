#include "gridauth/broker.hpp"

#include <algorithm>

#include "httplib.h"

#include "gridauth/fsutil.hpp"
#include "gridauth/rng.hpp"

namespace gridauth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// BrokerConfig

json BrokerConfig::ExperimentCfg::to_json() const {
    json keys = json::object();
    for (const auto &[principal, pub] : secondary_keys) keys[principal] = pub;
    return json{{"experiment", experiment}, {"issuer", issuer},
                {"issuer_url", issuer_url}, {"client_id", client_id},
                {"client_secret", client_secret}, {"roles", roles},
                {"realm", realm},           {"secondary_keys", keys}};
}

Expected<BrokerConfig> BrokerConfig::parse(const json &doc) {
    auto bad = [](const std::string &where, const std::string &why) {
        return Error{"invalid_config", where + ": " + why};
    };
    if (!doc.is_object()) return bad("<root>", "expected an object");

    BrokerConfig cfg;
    if (!doc.contains("experiments") || !doc["experiments"].is_array())
        return bad("experiments", "required array missing");

    for (const auto &e : doc["experiments"]) {
        const std::string where = "experiments/" + e.value("experiment", std::string("?"));
        if (!e.is_object()) return bad("experiments", "entries must be objects");
        ExperimentCfg ec;
        ec.experiment = e.value("experiment", std::string());
        ec.issuer = e.value("issuer", std::string());
        ec.issuer_url = e.value("issuer_url", std::string());
        ec.client_id = e.value("client_id", std::string());
        ec.client_secret = e.value("client_secret", std::string());
        if (ec.experiment.empty()) return bad(where, "experiment name required");
        if (ec.issuer.empty()) return bad(where, "issuer required");
        if (ec.issuer_url.rfind("http://", 0) != 0 && ec.issuer_url.rfind("https://", 0) != 0)
            return bad(where, "issuer_url must be absolute");
        if (ec.client_id.empty() || ec.client_secret.empty())
            return bad(where, "client_id and client_secret required");
        if (!e.contains("roles") || !e["roles"].is_array() || e["roles"].empty())
            return bad(where, "at least one role required");
        for (const auto &r : e["roles"]) {
            if (!r.is_string() || r.get<std::string>().empty())
                return bad(where, "roles must be non-empty strings");
            ec.roles.push_back(r.get<std::string>());
        }
        std::sort(ec.roles.begin(), ec.roles.end());
        ec.roles.erase(std::unique(ec.roles.begin(), ec.roles.end()), ec.roles.end());
        // Each experiment answers under its own realm even when several share
        // one upstream issuer.
        ec.realm = e.value("realm", ec.experiment);
        if (e.contains("secondary_keys")) {
            if (!e["secondary_keys"].is_object())
                return bad(where, "secondary_keys must map principal to public key");
            for (const auto &[principal, pub] : e["secondary_keys"].items()) {
                if (!pub.is_string()) return bad(where, "secondary key must be a hex string");
                ec.secondary_keys[principal] = pub.get<std::string>();
            }
        }
        if (cfg.experiments.count(ec.experiment))
            return bad(where, "duplicate experiment");
        cfg.experiments.emplace(ec.experiment, std::move(ec));
    }

    cfg.rate_limit_per_min = doc.value("rate_limit_per_min", 60);
    if (cfg.rate_limit_per_min <= 0)
        return bad("rate_limit_per_min", "must be a positive integer");

    if (doc.contains("ha_servers")) {
        if (!doc["ha_servers"].is_array()) return bad("ha_servers", "must be an array");
        for (const auto &h : doc["ha_servers"]) {
            if (!h.is_string()) return bad("ha_servers", "entries must be host strings");
            cfg.ha_servers.push_back(h.get<std::string>());
        }
        if (!cfg.ha_servers.empty() && cfg.ha_servers.size() != 3)
            return bad("ha_servers", "high availability requires exactly three servers");
    }

    if (doc.contains("lifetimes")) {
        const auto &lt = doc["lifetimes"];
        if (!lt.is_object()) return bad("lifetimes", "must be an object");
        cfg.lifetimes.access_token = lt.value("access_token", cfg.lifetimes.access_token);
        cfg.lifetimes.broker_token = lt.value("broker_token", cfg.lifetimes.broker_token);
        cfg.lifetimes.refresh_token = lt.value("refresh_token", cfg.lifetimes.refresh_token);
    }
    if (auto v = cfg.lifetimes.validate(); !v.ok())
        return bad("lifetimes", v.error().message);

    return cfg;
}

json BrokerConfig::to_json() const {
    json exps = json::object();
    for (const auto &[name, ec] : experiments) exps[name] = ec.to_json();
    return json{{"experiments", exps},
                {"rate_limit_per_min", rate_limit_per_min},
                {"ha_servers", ha_servers},
                {"lifetimes",
                 {{"access_token", lifetimes.access_token},
                  {"broker_token", lifetimes.broker_token},
                  {"refresh_token", lifetimes.refresh_token}}}};
}

json ChangeReport::to_json() const {
    return json{{"added", added}, {"removed", removed}, {"modified", modified}};
}

ChangeReport diff_configs(const BrokerConfig &before, const BrokerConfig &after) {
    ChangeReport rep;
    for (const auto &[name, ec] : after.experiments) {
        auto it = before.experiments.find(name);
        if (it == before.experiments.end())
            rep.added.push_back("experiments/" + name);
        else if (it->second.to_json() != ec.to_json())
            rep.modified.push_back("experiments/" + name);
    }
    for (const auto &[name, ec] : before.experiments) {
        (void)ec;
        if (!after.experiments.count(name)) rep.removed.push_back("experiments/" + name);
    }
    if (before.rate_limit_per_min != after.rate_limit_per_min)
        rep.modified.push_back("rate_limit_per_min");
    if (before.ha_servers != after.ha_servers) rep.modified.push_back("ha_servers");
    if (before.lifetimes.access_token != after.lifetimes.access_token ||
        before.lifetimes.broker_token != after.lifetimes.broker_token ||
        before.lifetimes.refresh_token != after.lifetimes.refresh_token)
        rep.modified.push_back("lifetimes");
    std::sort(rep.added.begin(), rep.added.end());
    std::sort(rep.removed.begin(), rep.removed.end());
    std::sort(rep.modified.begin(), rep.modified.end());
    return rep;
}

// ---------------------------------------------------------------------------
// BrokerService

BrokerService::BrokerService(Options opts, ClockPtr clock)
    : opts_(std::move(opts)), clock_(std::move(clock)), log_(opts_.log_path),
      limiter_(60) {}

std::string BrokerService::record_key(const std::string &experiment, const std::string &role,
                                      const std::string &principal) {
    return experiment + "|" + role + "|" + principal;
}

Status BrokerService::init(const json &config_doc) {
    if (auto s = ensure_dir(opts_.data_dir); !s.ok()) return s;
    auto st = SecretStore::open(opts_.data_dir + "/secrets.enc", opts_.master_key_hex);
    if (!st.ok()) return st.error();
    store_.emplace(std::move(st.value()));
    if (auto s = load_enrolled(); !s.ok()) return s;
    auto rep = apply_config(config_doc);
    if (!rep.ok()) return rep.error();
    return ok_status();
}

Expected<ChangeReport> BrokerService::apply_config(const json &config_doc) {
    auto parsed = BrokerConfig::parse(config_doc);
    if (!parsed.ok()) return parsed.error(); // old config stays live
    std::lock_guard<std::mutex> lk(mu_);
    BrokerConfig next = std::move(parsed.value());
    ChangeReport rep = diff_configs(config_, next);

    // An experiment dropped from the configuration takes its stored refresh
    // tokens, enrolled keys, and outstanding broker tokens with it.
    for (const auto &path : rep.removed) {
        const std::string name = path.substr(std::string("experiments/").size());
        if (store_) {
            for (const auto &key : store_->keys()) {
                if (key.rfind(name + "|", 0) == 0) (void)store_->erase(key);
            }
        }
        for (auto it = enrolled_.begin(); it != enrolled_.end();) {
            if (it->first.rfind(name + "|", 0) == 0)
                it = enrolled_.erase(it);
            else
                ++it;
        }
        for (auto it = broker_tokens_.begin(); it != broker_tokens_.end();) {
            if (it->second.experiment == name)
                it = broker_tokens_.erase(it);
            else
                ++it;
        }
    }

    // Keys named in the config are enrolled as if pre-distributed.
    for (const auto &[name, ec] : next.experiments) {
        for (const auto &[principal, pub] : ec.secondary_keys)
            enrolled_[name + "|" + principal] = pub;
    }

    limiter_.set_limit(next.rate_limit_per_min);
    config_ = std::move(next);
    if (auto s = persist_enrolled(); !s.ok()) return s.error();
    log_.write("config applied added=" + std::to_string(rep.added.size()) +
               " removed=" + std::to_string(rep.removed.size()) +
               " modified=" + std::to_string(rep.modified.size()));
    return rep;
}

bool BrokerService::session_expired(const Session &s) const {
    return clock_->now() >= s.created_at + opts_.session_ttl;
}

std::optional<std::string> BrokerService::enrolled_key(const std::string &experiment,
                                                       const std::string &principal) const {
    auto it = enrolled_.find(experiment + "|" + principal);
    if (it == enrolled_.end()) return std::nullopt;
    return it->second;
}

Status BrokerService::persist_enrolled() {
    json doc = json::object();
    for (const auto &[k, v] : enrolled_) doc[k] = v;
    return write_file_atomic(opts_.data_dir + "/enrolled.json", doc.dump(2) + "\n", 0644);
}

Status BrokerService::load_enrolled() {
    auto text = read_file(opts_.data_dir + "/enrolled.json");
    if (!text) return ok_status();
    json doc = json::parse(*text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        return Error{"corrupt_state", "enrolled.json is not a JSON object"};
    for (const auto &[k, v] : doc.items()) enrolled_[k] = v.get<std::string>();
    return ok_status();
}

json BrokerService::mint_broker_token(const std::string &experiment, const std::string &role,
                                      const std::string &principal) {
    const int64_t now = clock_->now();
    TokenRec rec;
    rec.experiment = experiment;
    rec.role = role;
    rec.principal = principal;
    rec.issued_at = now;
    rec.expires_at = now + config_.lifetimes.broker_token;
    std::string secret = random_token(24);
    broker_tokens_[secret] = rec;
    return json{{"broker_token", secret},
                {"token_kind", "broker"},
                {"experiment", experiment},
                {"role", role},
                {"principal", principal},
                {"issued_at", rec.issued_at},
                {"expires_at", rec.expires_at},
                {"expires_in", config_.lifetimes.broker_token}};
}

Expected<json> BrokerService::issuer_post(const BrokerConfig::ExperimentCfg &cfg,
                                          std::multimap<std::string, std::string> params) {
    SplitUrl u = split_url(cfg.issuer_url);
    httplib::Client cli(u.origin);
    cli.set_connection_timeout(2, 0);
    cli.set_read_timeout(5, 0);
    auto res = cli.Post(u.path + "/token", httplib::Params(params.begin(), params.end()));
    if (!res)
        return Error{"issuer_unreachable", "no response from " + cfg.issuer_url};
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded())
        return Error{"issuer_unreachable", "unparseable response from " + cfg.issuer_url};
    if (res->status != 200) {
        return Error{body.value("error", std::string("issuer_error")),
                     body.value("error_description", std::string("issuer refused the request"))};
    }
    return body;
}

Expected<json> BrokerService::bootstrap_begin(const std::string &principal,
                                              const std::string &experiment,
                                              const std::string &role) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = config_.experiments.find(experiment);
    if (it == config_.experiments.end())
        return Error{"unknown_experiment", "no such experiment: " + experiment};
    const auto &cfg = it->second;
    if (std::find(cfg.roles.begin(), cfg.roles.end(), role) == cfg.roles.end())
        return Error{"unknown_role", "experiment " + experiment + " has no role " + role};

    int live = 0;
    for (const auto &[h, s] : sessions_) {
        (void)h;
        if (s.principal == principal && s.status == "pending" && !session_expired(s)) ++live;
    }
    if (live >= opts_.max_sessions_per_principal)
        return Error{"too_many_sessions",
                     "principal " + principal + " already has " + std::to_string(live) +
                         " bootstrap sessions in flight"};

    Session s;
    s.handle = random_token(16);
    s.state = random_token(16);
    s.principal = principal;
    s.experiment = experiment;
    s.role = role;
    s.created_at = clock_->now();
    by_state_[s.state] = s.handle;
    ++sessions_created_;

    httplib::Params q{{"response_type", "code"},
                      {"client_id", cfg.client_id},
                      {"state", s.state},
                      {"redirect_uri", opts_.base_url + "/v1/auth/oidc/callback"},
                      {"principal", principal},
                      {"experiment", experiment},
                      {"role", role}};
    std::string auth_url =
        cfg.issuer_url + "/authorize?" + httplib::detail::params_to_query_str(q);
    json out{{"handle", s.handle}, {"auth_url", auth_url}, {"expires_in", opts_.session_ttl}};
    sessions_.emplace(s.handle, std::move(s));
    log_.write("bootstrap begin principal=" + principal + " experiment=" + experiment +
               " role=" + role);
    return out;
}

Expected<json> BrokerService::bootstrap_poll(const std::string &handle) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = sessions_.find(handle);
    if (it == sessions_.end()) return Error{"unknown_handle", "no such bootstrap session"};
    const Session &s = it->second;
    if (s.status == "pending" && session_expired(s)) return json{{"status", "expired"}};
    if (s.status == "complete") {
        json out = s.result;
        out["status"] = "complete";
        return out;
    }
    return json{{"status", s.status}};
}

Expected<std::string> BrokerService::handle_callback(const std::string &state,
                                                     const std::string &code,
                                                     const std::string &oauth_error) {
    BrokerConfig::ExperimentCfg cfg;
    std::string handle;
    {
        std::lock_guard<std::mutex> lk(mu_);
        auto st = by_state_.find(state);
        if (st == by_state_.end())
            return Error{"unknown_state", "callback state does not match any session"};
        handle = st->second;
        Session &s = sessions_.at(handle);
        if (session_expired(s)) return Error{"expired_session", "bootstrap session timed out"};
        if (!oauth_error.empty()) {
            s.status = "denied";
            log_.write("bootstrap denied principal=" + s.principal);
            return std::string("<html><body>Authorization was denied. You may close this "
                               "window.</body></html>");
        }
        cfg = config_.experiments.at(s.experiment);
    }

    // Redeem outside the lock: the issuer round trip must not stall other
    // broker requests.
    Expected<json> redeemed = issuer_post(cfg, {{"grant_type", "authorization_code"},
                                                {"code", code},
                                                {"client_id", cfg.client_id},
                                                {"client_secret", cfg.client_secret}});

    std::lock_guard<std::mutex> lk(mu_);
    Session &s = sessions_.at(handle);
    if (!redeemed.ok()) {
        s.status = "denied";
        s.result = json{{"error", redeemed.error().code}};
        return redeemed.error();
    }
    const json &tok = redeemed.value();
    const int64_t now = clock_->now();
    json record{{"refresh_handle", tok.at("refresh_token").get<std::string>()},
                {"issuer", cfg.issuer},
                {"experiment", s.experiment},
                {"role", s.role},
                {"principal", s.principal},
                {"obtained_at", now},
                {"last_used", now}};
    if (auto w = store_->put(record_key(s.experiment, s.role, s.principal), record); !w.ok())
        return w.error();

    // The refresh token stays inside the broker; the caller gets a broker
    // token plus the first access token.
    json result = mint_broker_token(s.experiment, s.role, s.principal);
    result["access_token"] = tok.value("access_token", std::string());
    result["access_expires_in"] = tok.value("expires_in", int64_t{0});
    result["scope"] = tok.value("scope", std::string());
    s.status = "complete";
    s.result = result;
    log_.write("bootstrap complete principal=" + s.principal + " experiment=" + s.experiment +
               " role=" + s.role);
    return std::string(
        "<html><body>Sign-in complete. You may close this window.</body></html>");
}

Expected<json> BrokerService::renew(const SecondaryAssertion &assertion,
                                    const std::string &experiment, const std::string &role) {
    BrokerConfig::ExperimentCfg cfg;
    std::string pub;
    {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = config_.experiments.find(experiment);
        if (it == config_.experiments.end())
            return Error{"unknown_experiment", "no such experiment: " + experiment};
        cfg = it->second;
        if (std::find(cfg.roles.begin(), cfg.roles.end(), role) == cfg.roles.end())
            return Error{"unknown_role", "experiment " + experiment + " has no role " + role};
        auto key = enrolled_key(experiment, assertion.principal);
        if (!key)
            return Error{"not_enrolled",
                         "no secondary key enrolled for " + assertion.principal + " in " +
                             experiment};
        pub = *key;
    }
    if (assertion.realm != cfg.realm)
        return Error{"realm_mismatch", "assertion realm " + assertion.realm +
                                           " does not match experiment realm " + cfg.realm};
    if (auto v = verify_assertion(assertion, pub, clock_->now(), opts_.assertion_window); !v.ok())
        return v.error();

    const std::string key = record_key(experiment, role, assertion.principal);
    std::string old_handle;
    {
        std::lock_guard<std::mutex> lk(mu_);
        auto rec = store_->get(key);
        if (!rec)
            return Error{"bootstrap_required",
                         "no stored credential for " + assertion.principal + "; run the "
                         "interactive bootstrap first"};
        old_handle = rec->at("refresh_handle").get<std::string>();
    }

    Expected<json> renewed = issuer_post(cfg, {{"grant_type", "refresh_token_renewal"},
                                               {"refresh_token", old_handle},
                                               {"client_id", cfg.client_id},
                                               {"client_secret", cfg.client_secret}});
    std::lock_guard<std::mutex> lk(mu_);
    if (!renewed.ok()) {
        if (renewed.error().code == "invalid_grant") {
            // The issuer no longer honors the stored token; drop it so the
            // next attempt reports the real remedy.
            (void)store_->erase(key);
            log_.write("renew invalidated principal=" + assertion.principal +
                       " experiment=" + experiment);
            return Error{"bootstrap_required",
                         "stored credential was rejected by the issuer; run the interactive "
                         "bootstrap again"};
        }
        return renewed.error();
    }
    auto rec = store_->get(key);
    if (!rec)
        return Error{"bootstrap_required", "stored credential disappeared during renewal"};
    json updated = *rec;
    updated["refresh_handle"] = renewed.value().at("refresh_token").get<std::string>();
    updated["obtained_at"] = clock_->now();
    updated["last_used"] = clock_->now();
    if (auto w = store_->put(key, updated); !w.ok()) return w.error();
    log_.write("renewed principal=" + assertion.principal + " experiment=" + experiment +
               " role=" + role);
    return mint_broker_token(experiment, role, assertion.principal);
}

Expected<json> BrokerService::exchange(const std::string &broker_secret,
                                       const std::string &scopes_text,
                                       const std::string &audience) {
    BrokerConfig::ExperimentCfg cfg;
    TokenRec rec;
    std::string key;
    std::string handle;
    {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = broker_tokens_.find(broker_secret);
        if (it == broker_tokens_.end())
            return Error{"broker_token_unknown", "broker token is not recognized"};
        rec = it->second;
        const int64_t now = clock_->now();
        if (now >= rec.expires_at) {
            return Error{"broker_token_expired",
                         "broker token expired " + std::to_string(now - rec.expires_at) +
                             "s ago; renew or re-bootstrap"};
        }
        auto d = limiter_.check(rec.principal, now);
        if (!d.allowed) return Error{"rate_limited", std::to_string(d.retry_after)};
        auto ce = config_.experiments.find(rec.experiment);
        if (ce == config_.experiments.end())
            return Error{"bootstrap_required", "experiment no longer served by this broker"};
        cfg = ce->second;
        key = record_key(rec.experiment, rec.role, rec.principal);
        auto stored = store_->get(key);
        if (!stored)
            return Error{"bootstrap_required", "no stored credential for this broker token"};
        handle = stored->at("refresh_handle").get<std::string>();
    }

    httplib::Params params{{"grant_type", "refresh_token"},
                           {"refresh_token", handle},
                           {"client_id", cfg.client_id},
                           {"client_secret", cfg.client_secret}};
    if (!scopes_text.empty()) params.emplace("scope", scopes_text);
    if (!audience.empty()) params.emplace("audience", audience);
    Expected<json> got = issuer_post(cfg, std::move(params));

    std::lock_guard<std::mutex> lk(mu_);
    if (!got.ok()) {
        if (got.error().code == "invalid_grant") {
            (void)store_->erase(key);
            return Error{"bootstrap_required",
                         "stored credential was rejected by the issuer; run the interactive "
                         "bootstrap again"};
        }
        return got.error(); // invalid_scope and friends pass through verbatim
    }
    if (auto stored = store_->get(key)) {
        json updated = *stored;
        updated["last_used"] = clock_->now();
        (void)store_->put(key, updated);
    }
    json out = got.value();
    out.erase("refresh_token"); // belt and braces: never forward one
    out.erase("refresh_expires_in");
    return out;
}

Expected<json> BrokerService::store_for_robot(const std::string &admin_token,
                                              const std::string &principal,
                                              const std::string &experiment,
                                              const std::string &role,
                                              const std::string &session_handle,
                                              const std::string &secondary_public_hex) {
    std::lock_guard<std::mutex> lk(mu_);
    ApiDecision d = authorize_api(admin_token, {opts_.admin_scope}, opts_.admin_trust,
                                  clock_->now());
    if (!d.allow) return Error{"access_denied", d.reason};

    auto it = sessions_.find(session_handle);
    if (it == sessions_.end() || it->second.status != "complete" ||
        it->second.principal != principal || it->second.experiment != experiment ||
        it->second.role != role) {
        return Error{"invalid_session",
                     "no completed bootstrap session matches this principal/experiment/role"};
    }
    if (!store_->get(record_key(experiment, role, principal)))
        return Error{"invalid_session", "the session's stored credential is gone"};
    if (secondary_public_hex.size() != 64)
        return Error{"invalid_key", "secondary public key must be 32 bytes of hex"};
    const std::string ekey = experiment + "|" + principal;
    if (enrolled_.count(ekey))
        return Error{"duplicate_record",
                     principal + " already has a secondary key enrolled for " + experiment};
    enrolled_[ekey] = secondary_public_hex;
    if (auto s = persist_enrolled(); !s.ok()) return s.error();
    log_.write("robot enrolled principal=" + principal + " experiment=" + experiment +
               " by=" + d.claims.sub);
    return json{{"enrolled", true}, {"principal", principal}, {"experiment", experiment}};
}

json BrokerService::health() const {
    std::lock_guard<std::mutex> lk(mu_);
    int live = 0;
    for (const auto &[h, s] : sessions_) {
        (void)h;
        if (s.status == "pending" && !session_expired(s)) ++live;
    }
    return json{{"status", "ok"},
                {"experiments", config_.experiments.size()},
                {"stored_secrets", store_ ? store_->size() : 0},
                {"pending_sessions", live},
                {"time", clock_->now()}};
}

void BrokerService::set_base_url(const std::string &url) {
    std::lock_guard<std::mutex> lk(mu_);
    opts_.base_url = url;
}

int64_t BrokerService::sessions_created() const {
    std::lock_guard<std::mutex> lk(mu_);
    return sessions_created_;
}

int64_t BrokerService::requests_served() const { return requests_served_.load(); }

size_t BrokerService::stored_secret_count() const {
    std::lock_guard<std::mutex> lk(mu_);
    return store_ ? store_->size() : 0;
}

BrokerConfig BrokerService::config_snapshot() const {
    std::lock_guard<std::mutex> lk(mu_);
    return config_;
}

namespace {

int broker_status_for(const std::string &code) {
    if (code == "unknown_experiment" || code == "unknown_role" || code == "unknown_handle" ||
        code == "invalid_session")
        return 404;
    if (code == "access_denied" || code == "bad_signature" || code == "stale_timestamp" ||
        code == "not_enrolled" || code == "realm_mismatch" || code == "broker_token_unknown" ||
        code == "broker_token_expired" || code == "bootstrap_required")
        return 401;
    if (code == "rate_limited" || code == "too_many_sessions") return 429;
    if (code == "duplicate_record") return 409;
    if (code == "issuer_unreachable") return 502;
    return 400;
}

std::string bearer_of(const httplib::Request &req) {
    std::string h = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (h.rfind(prefix, 0) == 0) return h.substr(prefix.size());
    return "";
}

void send_broker_error(httplib::Response &res, const Error &e) {
    if (e.code == "rate_limited") {
        // The error message carries the machine-readable retry delay.
        int64_t retry = 0;
        try {
            retry = std::stoll(e.message);
        } catch (...) {
        }
        res.set_header("Retry-After", std::to_string(retry));
        nlohmann::json body{{"error", e.code},
                            {"error_description",
                             "rate limited; retry after " + std::to_string(retry) + "s"},
                            {"retry_after", retry}};
        res.status = 429;
        res.set_content(body.dump(), "application/json");
        return;
    }
    send_error(res, broker_status_for(e.code), e.code, e.message);
}

} // namespace

void BrokerService::attach(httplib::Server &srv) {
    // Every request except the health probe counts toward the served total,
    // so a client that answers from its cache is observable as zero here.
    srv.set_pre_routing_handler([this](const httplib::Request &req, httplib::Response &) {
        if (req.path != "/v1/health") requests_served_.fetch_add(1);
        return httplib::Server::HandlerResponse::Unhandled;
    });

    srv.Post("/v1/auth/oidc/begin", [this](const httplib::Request &req, httplib::Response &res) {
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object())
            return send_error(res, 400, "invalid_request", "expected a JSON object");
        auto out = bootstrap_begin(body.value("principal", std::string()),
                                   body.value("experiment", std::string()),
                                   body.value("role", std::string()));
        if (!out.ok()) return send_broker_error(res, out.error());
        send_json(res, 200, out.value());
    });

    srv.Get("/v1/auth/oidc/poll/:handle",
            [this](const httplib::Request &req, httplib::Response &res) {
                auto out = bootstrap_poll(req.path_params.at("handle"));
                if (!out.ok()) return send_broker_error(res, out.error());
                send_json(res, 200, out.value());
            });

    srv.Get("/v1/auth/oidc/callback",
            [this](const httplib::Request &req, httplib::Response &res) {
                auto page = handle_callback(req.get_param_value("state"),
                                            req.get_param_value("code"),
                                            req.get_param_value("error"));
                if (!page.ok()) return send_broker_error(res, page.error());
                res.status = 200;
                res.set_content(page.value(), "text/html");
            });

    srv.Post("/v1/auth/secondary", [this](const httplib::Request &req, httplib::Response &res) {
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object() || !body.contains("assertion"))
            return send_error(res, 400, "invalid_request",
                              "expected {assertion, experiment, role}");
        auto a = SecondaryAssertion::from_json(body["assertion"]);
        if (!a.ok()) return send_error(res, 400, "invalid_request", a.error().message);
        auto out = renew(a.value(), body.value("experiment", std::string()),
                         body.value("role", std::string()));
        if (!out.ok()) return send_broker_error(res, out.error());
        send_json(res, 200, out.value());
    });

    srv.Post("/v1/token/exchange", [this](const httplib::Request &req, httplib::Response &res) {
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object())
            return send_error(res, 400, "invalid_request", "expected a JSON object");
        std::string secret = body.value("broker_token", std::string());
        if (secret.empty()) secret = bearer_of(req);
        auto out = exchange(secret, body.value("scopes", std::string()),
                            body.value("audience", std::string()));
        if (!out.ok()) return send_broker_error(res, out.error());
        send_json(res, 200, out.value());
    });

    srv.Post("/v1/admin/robot", [this](const httplib::Request &req, httplib::Response &res) {
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object())
            return send_error(res, 400, "invalid_request", "expected a JSON object");
        auto out = store_for_robot(bearer_of(req), body.value("principal", std::string()),
                                   body.value("experiment", std::string()),
                                   body.value("role", std::string()),
                                   body.value("session", std::string()),
                                   body.value("secondary_public", std::string()));
        if (!out.ok()) return send_broker_error(res, out.error());
        send_json(res, 200, out.value());
    });

    srv.Post("/v1/admin/config", [this](const httplib::Request &req, httplib::Response &res) {
        ApiDecision d = authorize_api(bearer_of(req), {opts_.admin_scope}, opts_.admin_trust,
                                      clock_->now());
        if (!d.allow) return send_error(res, 401, "access_denied", d.reason);
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded())
            return send_error(res, 400, "invalid_config", "body is not JSON");
        auto rep = apply_config(body);
        if (!rep.ok()) return send_broker_error(res, rep.error());
        send_json(res, 200, rep.value().to_json());
    });

    srv.Get("/v1/health", [this](const httplib::Request &, httplib::Response &res) {
        send_json(res, 200, health());
    });
}

} // namespace gridauth

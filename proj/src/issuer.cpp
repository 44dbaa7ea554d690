#include "gridauth/issuer.hpp"

#include "httplib.h"

#include "gridauth/registry.hpp" // groups_for
#include "gridauth/rng.hpp"

namespace gridauth {

namespace {

std::string form_value(const std::map<std::string, std::string> &form, const char *key) {
    auto it = form.find(key);
    return it == form.end() ? std::string{} : it->second;
}

} // namespace

IssuerService::IssuerService(Options opts, ClockPtr clock)
    : opts_(std::move(opts)), clock_(std::move(clock)), log_(opts_.log_path) {}

Status IssuerService::configure(const nlohmann::json &issuers_config) {
    std::lock_guard lock(mu_);
    if (!issuers_config.is_array()) {
        return Error{"invalid_config", "issuer config must be an array"};
    }
    for (const auto &entry : issuers_config) {
        std::string name = entry.value("name", "");
        if (name.empty()) return Error{"invalid_config", "issuer without a name"};
        if (tenants_.count(name)) return Error{"invalid_config", "duplicate issuer: " + name};
        Tenant tenant;
        tenant.name = name;
        auto key = SigningKey::generate(name + "-k1", opts_.key_alg);
        if (!key.ok()) return key.error();
        tenant.signing = key.value();
        auto pub = tenant.signing.public_jwk();
        if (!pub.ok()) return pub.error();
        auto added = tenant.published.add(pub.value());
        if (!added.ok()) return added;
        for (const auto &row : entry.value("entries", nlohmann::json::array())) {
            EntryCfg cfg;
            for (const auto &s : row.value("scopes", nlohmann::json::array())) {
                auto parsed = parse_scope(s.get<std::string>());
                if (!parsed.ok()) return parsed.error();
                cfg.scopes.push_back(parsed.value());
            }
            for (const auto &g : row.value("groups", nlohmann::json::array())) {
                cfg.groups.push_back(g.get<std::string>());
            }
            tenant.entries[{row.value("experiment", ""), row.value("role", "")}] = cfg;
        }
        tenants_[name] = std::move(tenant);
    }
    return ok_status();
}

Status IssuerService::set_directory(const nlohmann::json &directory) {
    std::lock_guard lock(mu_);
    if (!directory.contains("part1") || !directory["part1"].is_array()) {
        return Error{"invalid_directory", "missing part1"};
    }
    assignments_.clear();
    for (const auto &user : directory["part1"]) {
        std::string uid = user.value("user_id", "");
        for (const auto &a : user.value("affiliations", nlohmann::json::array())) {
            assignments_.insert({uid, a.value("experiment", ""), a.value("role", "")});
        }
    }
    return ok_status();
}

Expected<std::string> IssuerService::register_client(const std::string &issuer,
                                                     const std::string &client_id) {
    std::lock_guard lock(mu_);
    auto it = tenants_.find(issuer);
    if (it == tenants_.end()) return Error{"unknown_issuer", issuer};
    if (client_id.empty()) return Error{"invalid_client", "empty client id"};
    if (it->second.clients.count(client_id)) {
        return Error{"duplicate_client", client_id + " already registered for " + issuer};
    }
    std::string secret = random_token(32);
    it->second.clients[client_id] = secret;
    return secret;
}

Status IssuerService::rotate_key(const std::string &issuer) {
    std::lock_guard lock(mu_);
    auto it = tenants_.find(issuer);
    if (it == tenants_.end()) return Error{"unknown_issuer", issuer};
    Tenant &tenant = it->second;
    tenant.key_seq++;
    auto key = SigningKey::generate(issuer + "-k" + std::to_string(tenant.key_seq), opts_.key_alg);
    if (!key.ok()) return key.error();
    auto pub = key.value().public_jwk();
    if (!pub.ok()) return pub.error();
    auto added = tenant.published.add(pub.value());
    if (!added.ok()) return added;
    tenant.signing = key.value();
    log_.write("issuer=" + issuer + " rotated signing key to " + tenant.signing.kid);
    return ok_status();
}

std::string IssuerService::issuer_url(const std::string &issuer) const {
    return opts_.base_url + "/" + issuer;
}

Expected<nlohmann::json> IssuerService::discovery(const std::string &issuer) const {
    std::lock_guard lock(mu_);
    if (!tenants_.count(issuer)) return Error{"unknown_issuer", issuer};
    std::string url = issuer_url(issuer);
    return nlohmann::json{{"issuer", url},
                          {"authorization_endpoint", url + "/authorize"},
                          {"token_endpoint", url + "/token"},
                          {"jwks_uri", url + "/jwks"},
                          {"grant_types_supported",
                           {"authorization_code", "refresh_token", "refresh_token_renewal"}}};
}

Expected<nlohmann::json> IssuerService::jwks(const std::string &issuer) const {
    std::lock_guard lock(mu_);
    auto it = tenants_.find(issuer);
    if (it == tenants_.end()) return Error{"unknown_issuer", issuer};
    return it->second.published.to_jwks();
}

Expected<std::string> IssuerService::authorize(const std::string &issuer,
                                               const std::string &client_id,
                                               const std::string &principal,
                                               const std::string &experiment,
                                               const std::string &role, bool approve) {
    std::lock_guard lock(mu_);
    auto it = tenants_.find(issuer);
    if (it == tenants_.end()) return Error{"unknown_issuer", issuer};
    Tenant &tenant = it->second;
    if (!tenant.clients.count(client_id)) {
        return Error{"unknown_client", client_id + " not registered for " + issuer};
    }
    auto entry = tenant.entries.find({experiment, role});
    if (entry == tenant.entries.end()) {
        return Error{"access_denied", "no such role: " + experiment + "/" + role};
    }
    if (!assignments_.count({principal, experiment, role})) {
        return Error{"access_denied",
                     principal + " holds no assignment for " + experiment + "/" + role};
    }
    if (!approve) {
        log_.write("issuer=" + issuer + " consent denied principal=" + principal);
        return Error{"access_denied", "consent denied"};
    }
    AuthCodeRecord rec;
    rec.code = random_token(32);
    rec.client_id = client_id;
    rec.issuer_name = issuer;
    rec.principal = principal;
    rec.experiment = experiment;
    rec.role = role;
    rec.scopes = entry->second.scopes;
    rec.groups = entry->second.groups;
    rec.expiry = clock_->now() + opts_.lifetimes.auth_code;
    codes_[rec.code] = rec;
    log_.write("issuer=" + issuer + " code issued principal=" + principal + " role=" +
               experiment + "/" + role);
    return rec.code;
}

std::string IssuerService::insert_record(RefreshTokenRecord rec) {
    for (auto it = records_.begin(); it != records_.end();) {
        const auto &r = it->second;
        if (r.principal == rec.principal && r.issuer_name == rec.issuer_name &&
            r.role == rec.role && r.client_id == rec.client_id) {
            it = records_.erase(it);
        } else {
            ++it;
        }
    }
    std::string handle = rec.handle;
    records_[handle] = std::move(rec);
    return handle;
}

Expected<std::string> IssuerService::mint_access(const Tenant &tenant,
                                                 const std::string &principal,
                                                 const std::vector<Scope> &scopes,
                                                 const std::vector<std::string> &groups,
                                                 const std::string &audience) {
    ClaimSet claims;
    claims.iss = issuer_url(tenant.name);
    claims.sub = principal;
    claims.aud = {audience.empty() ? std::string(kAnyAudience) : audience};
    claims.iat = clock_->now();
    claims.nbf = claims.iat;
    claims.exp = claims.iat + opts_.lifetimes.access_token;
    claims.jti = random_token(16);
    claims.scopes = scopes;
    claims.groups = groups;
    return mint(claims, tenant.signing);
}

Expected<nlohmann::json> IssuerService::redeem_code(Tenant &tenant, const std::string &client_id,
                                                    const std::map<std::string, std::string> &form) {
    auto it = codes_.find(form_value(form, "code"));
    if (it == codes_.end()) return Error{"invalid_grant", "unknown code"};
    AuthCodeRecord &rec = it->second;
    if (rec.issuer_name != tenant.name || rec.client_id != client_id) {
        return Error{"invalid_grant", "code bound to another client"};
    }
    if (rec.redeemed) return Error{"invalid_grant", "code already redeemed"};
    if (clock_->now() > rec.expiry) return Error{"invalid_grant", "code expired"};
    rec.redeemed = true;

    RefreshTokenRecord refresh;
    refresh.handle = random_token(32);
    refresh.principal = rec.principal;
    refresh.issuer_name = tenant.name;
    refresh.experiment = rec.experiment;
    refresh.role = rec.role;
    refresh.granted = rec.scopes;
    refresh.groups = rec.groups;
    refresh.issued_at = clock_->now();
    refresh.expires_at = refresh.issued_at + opts_.lifetimes.refresh_token;
    refresh.client_id = client_id;
    std::string handle = insert_record(refresh);

    auto access = mint_access(tenant, rec.principal, rec.scopes, rec.groups, "");
    if (!access.ok()) return access.error();
    log_.write("issuer=" + tenant.name + " code redeemed principal=" + rec.principal);
    return nlohmann::json{{"access_token", access.value()},
                          {"token_type", "Bearer"},
                          {"expires_in", opts_.lifetimes.access_token},
                          {"scope", scope_claim(rec.scopes)},
                          {"refresh_token", handle},
                          {"refresh_expires_in", opts_.lifetimes.refresh_token}};
}

Expected<nlohmann::json> IssuerService::exchange_refresh(
    Tenant &tenant, const std::string &client_id, const std::map<std::string, std::string> &form) {
    auto it = records_.find(form_value(form, "refresh_token"));
    if (it == records_.end()) return Error{"invalid_grant", "unknown refresh token"};
    RefreshTokenRecord &rec = it->second;
    if (rec.issuer_name != tenant.name || rec.client_id != client_id) {
        return Error{"invalid_grant", "refresh token bound to another client"};
    }
    if (clock_->now() >= rec.expires_at) return Error{"invalid_grant", "refresh token expired"};

    std::vector<Scope> issued = rec.granted;
    std::string scope_text = form_value(form, "scope");
    if (!scope_text.empty()) {
        auto requested = parse_scope_claim(scope_text);
        if (!requested.ok()) return Error{"invalid_scope", requested.error().message};
        auto narrowed = downscope(rec.granted, requested.value());
        if (!narrowed.ok()) return Error{"invalid_scope", narrowed.error().message};
        issued = narrowed.value();
    }
    auto access =
        mint_access(tenant, rec.principal, issued, rec.groups, form_value(form, "audience"));
    if (!access.ok()) return access.error();
    log_.write("issuer=" + tenant.name + " refresh exchange principal=" + rec.principal +
               " scopes=" + scope_claim(issued));
    return nlohmann::json{{"access_token", access.value()},
                          {"token_type", "Bearer"},
                          {"expires_in", opts_.lifetimes.access_token},
                          {"scope", scope_claim(issued)}};
}

Expected<nlohmann::json> IssuerService::renew_refresh(Tenant &tenant, const std::string &client_id,
                                                      const std::map<std::string, std::string> &form) {
    auto it = records_.find(form_value(form, "refresh_token"));
    if (it == records_.end()) return Error{"invalid_grant", "unknown refresh token"};
    RefreshTokenRecord rec = it->second;
    if (rec.issuer_name != tenant.name || rec.client_id != client_id) {
        return Error{"invalid_grant", "refresh token bound to another client"};
    }
    if (clock_->now() >= rec.expires_at) return Error{"invalid_grant", "refresh token expired"};

    records_.erase(it); // rotation: the old handle dies now
    rec.handle = random_token(32);
    rec.issued_at = clock_->now();
    rec.expires_at = rec.issued_at + opts_.lifetimes.refresh_token;
    std::string handle = insert_record(rec);
    log_.write("issuer=" + tenant.name + " refresh renewed principal=" + rec.principal);
    return nlohmann::json{{"refresh_token", handle},
                          {"refresh_expires_in", opts_.lifetimes.refresh_token},
                          {"rotated", true}};
}

Expected<nlohmann::json> IssuerService::token_grant(const std::string &issuer,
                                                    const std::map<std::string, std::string> &form) {
    std::lock_guard lock(mu_);
    auto it = tenants_.find(issuer);
    if (it == tenants_.end()) return Error{"unknown_issuer", issuer};
    Tenant &tenant = it->second;

    std::string client_id = form_value(form, "client_id");
    auto client = tenant.clients.find(client_id);
    if (client == tenant.clients.end() || client->second != form_value(form, "client_secret")) {
        return Error{"invalid_client", "client authentication failed"};
    }

    std::string grant = form_value(form, "grant_type");
    if (grant == "authorization_code") return redeem_code(tenant, client_id, form);
    if (grant == "refresh_token") return exchange_refresh(tenant, client_id, form);
    if (grant == "refresh_token_renewal") return renew_refresh(tenant, client_id, form);
    return Error{"unsupported_grant_type", grant};
}

size_t IssuerService::refresh_record_count() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

std::vector<std::string> IssuerService::refresh_handles() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto &[handle, _] : records_) out.push_back(handle);
    return out;
}

std::optional<RefreshTokenRecord> IssuerService::refresh_record(const std::string &handle) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(handle);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

Expected<std::string> IssuerService::seed_refresh_record(
    const std::string &issuer, const std::string &client_id, const std::string &principal,
    const std::string &experiment, const std::string &role, const std::vector<Scope> &granted) {
    std::lock_guard lock(mu_);
    auto it = tenants_.find(issuer);
    if (it == tenants_.end()) return Error{"unknown_issuer", issuer};
    if (!it->second.clients.count(client_id)) return Error{"unknown_client", client_id};
    RefreshTokenRecord rec;
    rec.handle = random_token(32);
    rec.principal = principal;
    rec.issuer_name = issuer;
    rec.experiment = experiment;
    rec.role = role;
    rec.granted = granted;
    rec.groups = groups_for(experiment, role);
    rec.issued_at = clock_->now();
    rec.expires_at = rec.issued_at + opts_.lifetimes.refresh_token;
    rec.client_id = client_id;
    return insert_record(rec);
}

std::vector<std::string> IssuerService::issuer_names() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto &[name, _] : tenants_) out.push_back(name);
    return out;
}

namespace {

std::map<std::string, std::string> params_to_map(const httplib::Params &params) {
    std::map<std::string, std::string> out;
    for (const auto &[k, v] : params) out[k] = v;
    return out;
}

const char *kConsentPage = R"(<!doctype html>
<html><body>
<h1>Token request</h1>
<p>{principal} requests a token for {experiment}/{role}.</p>
<form method="post" action="{action}">
<input type="hidden" name="client_id" value="{client_id}">
<input type="hidden" name="principal" value="{principal}">
<input type="hidden" name="experiment" value="{experiment}">
<input type="hidden" name="role" value="{role}">
<input type="hidden" name="state" value="{state}">
<input type="hidden" name="redirect_uri" value="{redirect_uri}">
<button name="approve" value="yes">Approve</button>
<button name="approve" value="no">Deny</button>
</form>
</body></html>)";

std::string fill(std::string page, const std::string &key, const std::string &value) {
    std::string needle = "{" + key + "}";
    size_t pos;
    while ((pos = page.find(needle)) != std::string::npos) {
        page.replace(pos, needle.size(), value);
    }
    return page;
}

} // namespace

void IssuerService::attach(httplib::Server &srv) {
    srv.Get("/:name/.well-known/openid-configuration",
            [this](const httplib::Request &req, httplib::Response &res) {
                auto doc = discovery(req.path_params.at("name"));
                if (!doc.ok()) {
                    send_error(res, 404, doc.error().code, doc.error().message);
                    return;
                }
                send_json(res, 200, doc.value());
            });

    srv.Get("/:name/jwks", [this](const httplib::Request &req, httplib::Response &res) {
        auto doc = jwks(req.path_params.at("name"));
        if (!doc.ok()) {
            send_error(res, 404, doc.error().code, doc.error().message);
            return;
        }
        send_json(res, 200, doc.value());
    });

    auto finish_authorize = [this](const std::string &issuer, const httplib::Request &req,
                                   httplib::Response &res, bool approve) {
        auto get = [&](const char *k) { return req.get_param_value(k); };
        auto code = authorize(issuer, get("client_id"), get("principal"), get("experiment"),
                              get("role"), approve);
        std::string redirect_uri = get("redirect_uri");
        if (!code.ok()) {
            if (!redirect_uri.empty() && code.error().code == "access_denied") {
                res.set_redirect(redirect_uri + "?error=access_denied&state=" + get("state"));
                return;
            }
            int status = code.error().code == "access_denied" ? 403 : 400;
            send_error(res, status, code.error().code, code.error().message);
            return;
        }
        if (!redirect_uri.empty()) {
            res.set_redirect(redirect_uri + "?code=" + code.value() + "&state=" + get("state"));
        } else {
            send_json(res, 200, {{"code", code.value()}});
        }
    };

    srv.Get("/:name/authorize", [this, finish_authorize](const httplib::Request &req,
                                                         httplib::Response &res) {
        std::string issuer = req.path_params.at("name");
        if (opts_.auto_approve) {
            finish_authorize(issuer, req, res, true);
            return;
        }
        std::string page = kConsentPage;
        page = fill(page, "action", "/" + issuer + "/authorize");
        for (const char *k : {"client_id", "principal", "experiment", "role", "state",
                              "redirect_uri"}) {
            page = fill(page, k, req.get_param_value(k));
        }
        res.set_content(page, "text/html");
    });

    srv.Post("/:name/authorize", [finish_authorize](const httplib::Request &req,
                                                    httplib::Response &res) {
        finish_authorize(req.path_params.at("name"), req, res,
                         req.get_param_value("approve") == "yes");
    });

    srv.Post("/:name/token", [this](const httplib::Request &req, httplib::Response &res) {
        auto out = token_grant(req.path_params.at("name"), params_to_map(req.params));
        if (!out.ok()) {
            const auto &code = out.error().code;
            int status = code == "invalid_client"   ? 401
                         : code == "unknown_issuer" ? 404
                                                    : 400;
            send_error(res, status, code, out.error().message);
            return;
        }
        send_json(res, 200, out.value());
    });
}

} // namespace gridauth

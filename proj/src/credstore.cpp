#include "gridauth/credstore.hpp"

#include <unistd.h>

#include <filesystem>

#include "httplib.h"

#include "gridauth/claims.hpp"
#include "gridauth/fsutil.hpp"
#include "gridauth/jwt.hpp"

namespace gridauth {

using nlohmann::json;

JobRegistration JobRegistration::from_json(const json &j) {
    JobRegistration reg;
    reg.job_id = j.value("job_id", std::string());
    reg.owner = j.value("owner", std::string());
    reg.experiment = j.value("experiment", std::string());
    reg.role = j.value("role", std::string());
    reg.sandbox = j.value("sandbox", std::string());
    reg.scopes_text = j.value("scopes", std::string());
    reg.lead_time = j.value("lead_time", int64_t{600});
    return reg;
}

CredStoreService::CredStoreService(Options opts, ClockPtr clock)
    : opts_(std::move(opts)), clock_(std::move(clock)), log_(opts_.log_path) {}

std::string CredStoreService::cred_key(const std::string &owner, const std::string &experiment,
                                       const std::string &role) {
    return owner + "|" + experiment + "|" + role;
}

Expected<json> CredStoreService::exchange(const StoredCredential &cred,
                                          const std::string &scopes) {
    json body{{"broker_token", cred.broker_token}};
    if (!scopes.empty()) body["scopes"] = scopes;
    return http_post_json(opts_.broker_url, "/v1/token/exchange", body);
}

Expected<json> CredStoreService::store_credential(const std::string &owner,
                                                  const std::string &experiment,
                                                  const std::string &role,
                                                  const std::string &broker_token) {
    if (owner.empty() || experiment.empty() || broker_token.empty())
        return Error{"invalid_request", "owner, experiment, and broker_token are required"};
    StoredCredential cred{owner, experiment, role, broker_token, clock_->now()};

    // One probe exchange proves the token is real before we take custody.
    auto probe = exchange(cred, "");
    if (!probe.ok()) {
        if (probe.error().code == "network" || probe.error().code == "issuer_unreachable")
            return probe.error();
        return Error{"invalid_credential",
                     "broker rejected the token: " + probe.error().code};
    }

    std::lock_guard<std::mutex> lk(mu_);
    auto key = cred_key(owner, experiment, role);
    bool replaced = creds_.count(key) > 0;
    creds_[key] = std::move(cred); // the old token is gone with the swap
    log_.write("stored owner=" + owner + " experiment=" + experiment + " role=" + role +
               " replaced=" + (replaced ? "true" : "false"));
    return json{{"replaced", replaced}};
}

Expected<json> CredStoreService::materialize(JobState &job) {
    auto it = creds_.find(cred_key(job.reg.owner, job.reg.experiment, job.reg.role));
    if (it == creds_.end())
        return Error{"no_credential", "no stored credential for " + job.reg.owner + "/" +
                                          job.reg.experiment + "/" + job.reg.role};
    auto out = exchange(it->second, job.reg.scopes_text);
    if (!out.ok()) {
        if (out.error().code == "invalid_scope")
            return Error{"downscope_refused", out.error().message};
        return out.error();
    }
    const std::string token = out.value().at("access_token").get<std::string>();
    auto dec = decode_unverified(token);
    if (!dec.ok()) return Error{"exchange_failed", "broker returned a malformed token"};
    auto claims = ClaimSet::from_json(dec.value().payload);
    if (!claims.ok()) return Error{"exchange_failed", "broker returned a malformed token"};

    // Rename-based swap: a reader in the sandbox never sees half a token.
    if (auto w = write_file_atomic(job.reg.sandbox + "/bt_token", token + "\n", 0600); !w.ok())
        return Error{"io_error", w.error().message};
    job.expires_at = claims.value().exp;
    job.needs_renewal = false;
    job.last_error.clear();
    return json{{"job_id", job.reg.job_id}, {"expires_at", job.expires_at}};
}

Expected<json> CredStoreService::attach_job(const JobRegistration &reg) {
    if (reg.job_id.empty() || reg.owner.empty() || reg.experiment.empty())
        return Error{"invalid_request", "job_id, owner, and experiment are required"};
    std::error_code ec;
    if (!std::filesystem::is_directory(reg.sandbox, ec))
        return Error{"invalid_sandbox", "sandbox is not a directory: " + reg.sandbox};
    if (::access(reg.sandbox.c_str(), W_OK) != 0)
        return Error{"invalid_sandbox", "sandbox is not writable: " + reg.sandbox};
    if (reg.lead_time <= 0 || reg.lead_time >= opts_.lifetimes.access_token)
        return Error{"invalid_lead_time",
                     "lead time must sit inside the access-token lifetime (" +
                         std::to_string(opts_.lifetimes.access_token) + "s)"};
    if (reg.lead_time <= opts_.cycle_period)
        return Error{"invalid_lead_time",
                     "lead time must exceed the refresh cycle period (" +
                         std::to_string(opts_.cycle_period) + "s)"};

    std::lock_guard<std::mutex> lk(mu_);
    JobState job;
    job.reg = reg;
    auto out = materialize(job);
    if (!out.ok()) return out.error();
    jobs_[reg.job_id] = std::move(job);
    log_.write("attached job=" + reg.job_id + " owner=" + reg.owner);
    return out;
}

json CredStoreService::refresh_cycle() {
    std::lock_guard<std::mutex> lk(mu_);
    const int64_t now = clock_->now();
    json actions = json::array();
    for (auto &[id, job] : jobs_) {
        json entry{{"job_id", id}};
        if (job.expires_at - now > job.reg.lead_time) {
            entry["action"] = "none";
            entry["expires_at"] = job.expires_at;
            actions.push_back(entry);
            continue;
        }
        auto out = materialize(job);
        if (out.ok()) {
            entry["action"] = "refreshed";
            entry["expires_at"] = job.expires_at;
        } else if (out.error().code == "broker_token_expired" ||
                   out.error().code == "broker_token_unknown" ||
                   out.error().code == "bootstrap_required" ||
                   out.error().code == "no_credential") {
            // The owner must renew; the stale sandbox token stays in place
            // rather than being destroyed under the job.
            job.needs_renewal = true;
            job.last_error = out.error().code;
            entry["action"] = "needs-renewal";
            entry["error"] = out.error().code;
        } else {
            // Transient (broker outage, rate limit): the job still needs a
            // renewal it did not get, so flag it until a later cycle succeeds.
            job.needs_renewal = true;
            job.last_error = out.error().code;
            entry["action"] = "failed";
            entry["error"] = out.error().code;
        }
        actions.push_back(entry);
    }
    json rep{{"time", now}, {"actions", actions}};
    log_.write("cycle time=" + std::to_string(now) +
               " jobs=" + std::to_string(jobs_.size()));
    return rep;
}

json CredStoreService::report() const {
    std::lock_guard<std::mutex> lk(mu_);
    json jobs = json::array();
    for (const auto &[id, job] : jobs_) {
        jobs.push_back({{"job_id", id},
                        {"owner", job.reg.owner},
                        {"experiment", job.reg.experiment},
                        {"role", job.reg.role},
                        {"expires_at", job.expires_at},
                        {"needs_renewal", job.needs_renewal},
                        {"last_error", job.last_error}});
    }
    return json{{"credentials", creds_.size()}, {"jobs", jobs}, {"time", clock_->now()}};
}

void CredStoreService::attach(httplib::Server &srv) {
    srv.Post("/v1/creds", [this](const httplib::Request &req, httplib::Response &res) {
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object())
            return send_error(res, 400, "invalid_request", "expected a JSON object");
        auto out = store_credential(body.value("owner", std::string()),
                                    body.value("experiment", std::string()),
                                    body.value("role", std::string()),
                                    body.value("broker_token", std::string()));
        if (!out.ok()) {
            int status = out.error().code == "network" ? 502 : 400;
            return send_error(res, status, out.error().code, out.error().message);
        }
        send_json(res, 200, out.value());
    });

    srv.Post("/v1/jobs", [this](const httplib::Request &req, httplib::Response &res) {
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object())
            return send_error(res, 400, "invalid_request", "expected a JSON object");
        auto out = attach_job(JobRegistration::from_json(body));
        if (!out.ok()) {
            const std::string &code = out.error().code;
            int status = code == "no_credential"      ? 404
                         : code == "downscope_refused" ? 403
                         : code == "network"           ? 502
                                                       : 400;
            return send_error(res, status, code, out.error().message);
        }
        send_json(res, 200, out.value());
    });

    // Test hook: optionally drive a simulated clock, then run one cycle.
    srv.Post("/v1/cycle", [this](const httplib::Request &req, httplib::Response &res) {
        json body = json::parse(req.body, nullptr, false);
        int64_t advance = body.is_object() ? body.value("advance", int64_t{0}) : 0;
        if (advance > 0) {
            if (auto sim = std::dynamic_pointer_cast<SimClock>(clock_)) sim->advance(advance);
        }
        send_json(res, 200, refresh_cycle());
    });

    srv.Get("/v1/report", [this](const httplib::Request &, httplib::Response &res) {
        send_json(res, 200, report());
    });
}

} // namespace gridauth

#pragma once

#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/clock.hpp"
#include "gridauth/expected.hpp"
#include "gridauth/http_util.hpp"
#include "gridauth/lifetimes.hpp"

namespace httplib {
class Server;
}

namespace gridauth {

// One broker token held on behalf of a job owner. Exactly one per
// (owner, experiment, role); re-storing replaces it atomically.
struct StoredCredential {
    std::string owner;
    std::string experiment;
    std::string role;
    std::string broker_token;
    int64_t stored_at = 0;
};

struct JobRegistration {
    std::string job_id;
    std::string owner;
    std::string experiment;
    std::string role;
    std::string sandbox;     // directory that receives bt_token
    std::string scopes_text; // "" = full grant
    int64_t lead_time = 600; // refresh when remaining lifetime drops below this

    static JobRegistration from_json(const nlohmann::json &j);
};

// Credential daemon: keeps an unexpired access token materialized as
// <sandbox>/bt_token for every registered job, exchanging the owner's stored
// broker token at the broker whenever a token enters its lead window.
class CredStoreService {
  public:
    struct Options {
        std::string broker_url;
        Lifetimes lifetimes;       // access-token lifetime bounds lead times
        int64_t cycle_period = 300; // informational; lead_time must exceed it
        std::string log_path;
    };

    CredStoreService(Options opts, ClockPtr clock);

    // Probes the token with one unscoped exchange before accepting it.
    // Errors: invalid_credential (probe refused), network/issuer_unreachable.
    Expected<nlohmann::json> store_credential(const std::string &owner,
                                              const std::string &experiment,
                                              const std::string &role,
                                              const std::string &broker_token);

    // Errors: no_credential, invalid_sandbox, invalid_lead_time,
    // downscope_refused (surfaced verbatim), network.
    Expected<nlohmann::json> attach_job(const JobRegistration &reg);

    // One pass over every registered job; never aborts on a single job's
    // failure. Returns {time, actions: [{job_id, action, ...}]} with action
    // one of: none | refreshed | needs-renewal | failed.
    nlohmann::json refresh_cycle();

    nlohmann::json report() const;

    void attach(httplib::Server &srv);

  private:
    struct JobState {
        JobRegistration reg;
        int64_t expires_at = 0; // of the token currently in the sandbox
        bool needs_renewal = false;
        std::string last_error;
    };

    // Exchange + atomic sandbox write for one job; on success updates state.
    Expected<nlohmann::json> materialize(JobState &job);
    Expected<nlohmann::json> exchange(const StoredCredential &cred, const std::string &scopes);
    static std::string cred_key(const std::string &owner, const std::string &experiment,
                                const std::string &role);

    Options opts_;
    ClockPtr clock_;
    LineLog log_;
    mutable std::mutex mu_;
    std::map<std::string, StoredCredential> creds_; // key = owner|experiment|role
    std::map<std::string, JobState> jobs_;          // key = job_id
};

} // namespace gridauth

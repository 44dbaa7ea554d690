#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/clock.hpp"
#include "gridauth/expected.hpp"
#include "gridauth/scope.hpp"

namespace gridauth {

// The slice of the process environment the client consults, passed
// explicitly so tests can fabricate any layout.
struct Environment {
    std::map<std::string, std::string> vars;
    int uid = 0;
    std::string tmp_dir = "/tmp";

    static Environment from_process();
    std::string get(const std::string &name) const {
        auto it = vars.find(name);
        return it == vars.end() ? std::string() : it->second;
    }
};

// Where token files live. Access tokens follow the bearer-discovery
// convention (bt_u{uid} in the runtime dir); broker tokens are kept per
// (experiment, role[, credkey]) so identities never share a file.
struct TokenFileLayout {
    std::string runtime_dir; // bt_* files
    std::string cred_dir;    // vt_* files
    int uid = 0;

    static TokenFileLayout from_env(const Environment &env);

    std::string access_path() const;
    std::string broker_path(const std::string &experiment, const std::string &role,
                            const std::string &credkey) const;
};

// One discovered bearer token plus where it came from.
struct DiscoveredToken {
    std::string token;
    std::string source; // bearer-env | bearer-file | runtime-file | tmp-file
    std::string path;   // empty for bearer-env
};

// WLCG bearer-token discovery: BEARER_TOKEN, then BEARER_TOKEN_FILE, then
// the runtime-dir bt_u{uid}, then the tmp-dir bt_u{uid}. Absence of all four
// is a normal outcome, not an error.
std::optional<DiscoveredToken> discover_bearer(const Environment &env);

struct ClientOptions {
    std::string broker_url; // falls back to TOKEN_BROKER in the environment
    std::string experiment;
    std::string role;
    std::string principal;   // falls back to USER
    std::string scopes_text; // "" = the full grant
    std::string audience;    // "" = the catch-all audience
    std::string out_path;    // "" = layout default
    std::string credkey;
    std::string secondary_key_file; // enables browserless renewal
    bool allow_bootstrap = true;
    bool quiet = false;

    // Invoked with the authorization URL during a bootstrap. Tests complete
    // the consent dance here; the CLI prints the URL and waits for a human.
    std::function<void(const std::string &)> browse;
    // Called between bootstrap polls with the wait in milliseconds; the CLI
    // sleeps, tests return immediately.
    std::function<void(int)> wait = [](int) {};
    int poll_interval_ms = 5000;
    int poll_attempts = 180;
};

struct GetTokenResult {
    std::string access_token;
    std::string source; // cached | exchanged | renewed | bootstrapped
    std::string access_path;
    std::string broker_path;
    int64_t expires_at = 0;
    std::vector<Scope> scopes;
};

// The full htgettoken-shaped flow: cached file, else exchange the stored
// broker token, else renew it with the secondary key, else interactive
// bootstrap. Error codes seen by callers: auth_required, downscope_refused,
// network, invalid_request, io_error.
Expected<GetTokenResult> get_token(const ClientOptions &opts, const Environment &env,
                                   const ClockPtr &clock);

// Maps a get_token error to the documented process exit status:
// auth_required=2, downscope_refused=3, network=4, anything else=1.
int exit_code_for(const Error &e);

} // namespace gridauth

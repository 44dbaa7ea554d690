#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/expected.hpp"
#include "gridauth/jwt.hpp"
#include "gridauth/keys.hpp"
#include "gridauth/scope.hpp"

namespace gridauth {

// Experiments without a dedicated issuer all share this one.
inline constexpr const char *kSharedIssuer = "fermilab";

struct User {
    std::string user_id;
    std::string display_name;
    bool active = true;

    bool operator==(const User &) const = default;
};

struct Experiment {
    std::string name; // lowercase alphanumeric
    bool dedicated_issuer = false;
    std::string storage_prefix; // "/" + name

    bool operator==(const Experiment &) const = default;
};

struct Assignment {
    std::string user_id;
    std::string experiment;
    std::string role;

    auto operator<=>(const Assignment &) const = default;
};

struct RoleKey {
    std::string experiment;
    std::string role;

    auto operator<=>(const RoleKey &) const = default;
};

// One entry of the totally ordered change journal.
struct Change {
    std::string kind; // add_user | add_experiment | assign_role | set_role_scopes | deactivate_user
    std::string user_id;
    std::string display_name;
    std::string experiment;
    std::string role;
    bool dedicated_issuer = false;
    std::vector<Scope> scopes;

    static Change add_user(std::string user_id, std::string display_name);
    static Change add_experiment(std::string name, bool dedicated_issuer);
    static Change assign_role(std::string user_id, std::string experiment, std::string role);
    static Change set_role_scopes(std::string experiment, std::string role,
                                  std::vector<Scope> scopes);
    static Change deactivate_user(std::string user_id);

    nlohmann::json to_json() const;
    static Expected<Change> from_json(const nlohmann::json &j);

    bool operator==(const Change &) const = default;
};

struct RegistryState {
    int64_t serial = 0;
    std::map<std::string, User> users;
    std::map<std::string, Experiment> experiments;
    std::map<std::string, std::string> issuer_assignments; // experiment -> issuer name
    std::set<Assignment> assignments;
    std::map<RoleKey, std::vector<Scope>> role_scopes;

    Status check_invariants() const;

    nlohmann::json to_json() const;
    static Expected<RegistryState> from_json(const nlohmann::json &j);

    bool operator==(const RegistryState &) const = default;
};

// Pure: returns the successor state or an error, leaving the input untouched.
// Error codes: duplicate_add, dangling_reference, invalid_name.
Expected<RegistryState> apply_change(const RegistryState &state, const Change &change);

// The two-part directory document: part 1 lists each active collaborator with
// their (experiment, role) affiliations; part 2 lists the scope sets for
// exactly the (experiment, role) pairs part 1 references. Deterministic.
nlohmann::json export_directory(const RegistryState &state);

// Issuer/broker configuration derived from the state. Dedicated-issuer
// experiments get their own issuer entry; shared experiments collapse into
// the "fermilab" issuer but keep their own broker entry, so each experiment
// appears to have its own issuer. `issuer_base_url` has no trailing slash;
// issuer N lives at issuer_base_url + "/" + N.
nlohmann::json generate_configs(const RegistryState &state, const std::string &issuer_base_url);

// Groups claim carried by tokens for (experiment, role).
std::vector<std::string> groups_for(const std::string &experiment, const std::string &role);

// What the registry's own web API trusts: issuer allow-list plus their keys.
struct ApiTrust {
    KeySet keys;
    std::vector<std::string> issuers;
};

struct ApiDecision {
    bool allow = false;
    std::string reason; // empty when allowed
    ClaimSet claims;    // populated when allowed
};

// Allow iff the token verifies against a trusted issuer and carries a scope
// subsuming `required`.
ApiDecision authorize_api(const std::string &token, const Scope &required, const ApiTrust &trust,
                          int64_t now);

} // namespace gridauth

#include "gridauth/registry.hpp"

#include <algorithm>

namespace gridauth {

namespace {

bool lower_alnum(const std::string &s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'))) return false;
    }
    return true;
}

std::vector<Scope> normalized(std::vector<Scope> scopes) {
    std::sort(scopes.begin(), scopes.end(),
              [](const Scope &a, const Scope &b) { return a.str() < b.str(); });
    scopes.erase(std::unique(scopes.begin(), scopes.end()), scopes.end());
    return scopes;
}

nlohmann::json scope_strings(const std::vector<Scope> &scopes) {
    auto arr = nlohmann::json::array();
    for (const auto &s : scopes) arr.push_back(s.str());
    return arr;
}

} // namespace

Change Change::add_user(std::string user_id, std::string display_name) {
    Change c;
    c.kind = "add_user";
    c.user_id = std::move(user_id);
    c.display_name = std::move(display_name);
    return c;
}

Change Change::add_experiment(std::string name, bool dedicated_issuer) {
    Change c;
    c.kind = "add_experiment";
    c.experiment = std::move(name);
    c.dedicated_issuer = dedicated_issuer;
    return c;
}

Change Change::assign_role(std::string user_id, std::string experiment, std::string role) {
    Change c;
    c.kind = "assign_role";
    c.user_id = std::move(user_id);
    c.experiment = std::move(experiment);
    c.role = std::move(role);
    return c;
}

Change Change::set_role_scopes(std::string experiment, std::string role,
                               std::vector<Scope> scopes) {
    Change c;
    c.kind = "set_role_scopes";
    c.experiment = std::move(experiment);
    c.role = std::move(role);
    c.scopes = std::move(scopes);
    return c;
}

Change Change::deactivate_user(std::string user_id) {
    Change c;
    c.kind = "deactivate_user";
    c.user_id = std::move(user_id);
    return c;
}

nlohmann::json Change::to_json() const {
    nlohmann::json j{{"kind", kind}};
    if (kind == "add_user") {
        j["user_id"] = user_id;
        j["display_name"] = display_name;
    } else if (kind == "add_experiment") {
        j["experiment"] = experiment;
        j["dedicated_issuer"] = dedicated_issuer;
    } else if (kind == "assign_role") {
        j["user_id"] = user_id;
        j["experiment"] = experiment;
        j["role"] = role;
    } else if (kind == "set_role_scopes") {
        j["experiment"] = experiment;
        j["role"] = role;
        j["scopes"] = scope_strings(scopes);
    } else if (kind == "deactivate_user") {
        j["user_id"] = user_id;
    }
    return j;
}

Expected<Change> Change::from_json(const nlohmann::json &j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
        return Error{"invalid_change", "change must be an object with a kind"};
    }
    Change c;
    c.kind = j["kind"].get<std::string>();
    auto str = [&](const char *field) { return j.value(field, std::string{}); };
    if (c.kind == "add_user") {
        c.user_id = str("user_id");
        c.display_name = str("display_name");
    } else if (c.kind == "add_experiment") {
        c.experiment = str("experiment");
        c.dedicated_issuer = j.value("dedicated_issuer", false);
    } else if (c.kind == "assign_role") {
        c.user_id = str("user_id");
        c.experiment = str("experiment");
        c.role = str("role");
    } else if (c.kind == "set_role_scopes") {
        c.experiment = str("experiment");
        c.role = str("role");
        if (!j.contains("scopes") || !j["scopes"].is_array()) {
            return Error{"invalid_change", "set_role_scopes needs a scopes array"};
        }
        for (const auto &s : j["scopes"]) {
            if (!s.is_string()) return Error{"invalid_change", "scope entries must be strings"};
            auto parsed = parse_scope(s.get<std::string>());
            if (!parsed.ok()) return parsed.error();
            c.scopes.push_back(parsed.value());
        }
    } else if (c.kind == "deactivate_user") {
        c.user_id = str("user_id");
    } else {
        return Error{"invalid_change", "unknown change kind: " + c.kind};
    }
    return c;
}

Status RegistryState::check_invariants() const {
    for (const auto &[uid, u] : users) {
        if (uid.empty() || uid != u.user_id) {
            return Error{"invariant", "user id mismatch or empty"};
        }
    }
    for (const auto &[name, e] : experiments) {
        if (name != e.name || !lower_alnum(name)) {
            return Error{"invariant", "bad experiment name: " + name};
        }
        if (e.storage_prefix != "/" + name) {
            return Error{"invariant", "storage prefix mismatch for " + name};
        }
        auto it = issuer_assignments.find(name);
        if (it == issuer_assignments.end()) {
            return Error{"invariant", "experiment without issuer: " + name};
        }
        if (it->second != (e.dedicated_issuer ? name : kSharedIssuer)) {
            return Error{"invariant", "wrong issuer assignment for " + name};
        }
    }
    if (issuer_assignments.size() != experiments.size()) {
        return Error{"invariant", "issuer assignment for unknown experiment"};
    }
    for (const auto &a : assignments) {
        if (!users.count(a.user_id)) return Error{"invariant", "assignment to unknown user"};
        if (!experiments.count(a.experiment)) {
            return Error{"invariant", "assignment to unknown experiment"};
        }
        if (!role_scopes.count({a.experiment, a.role})) {
            return Error{"invariant", "assignment to role without scopes"};
        }
    }
    for (const auto &[key, scopes] : role_scopes) {
        if (!experiments.count(key.experiment)) {
            return Error{"invariant", "role scopes for unknown experiment"};
        }
        if (!lower_alnum(key.role)) return Error{"invariant", "bad role name: " + key.role};
        if (scopes.empty()) return Error{"invariant", "empty scope set for role"};
    }
    return ok_status();
}

nlohmann::json RegistryState::to_json() const {
    nlohmann::json j;
    j["serial"] = serial;
    auto users_arr = nlohmann::json::array();
    for (const auto &[_, u] : users) {
        users_arr.push_back(
            {{"user_id", u.user_id}, {"display_name", u.display_name}, {"active", u.active}});
    }
    j["users"] = users_arr;
    auto exp_arr = nlohmann::json::array();
    for (const auto &[_, e] : experiments) {
        exp_arr.push_back({{"name", e.name},
                           {"dedicated_issuer", e.dedicated_issuer},
                           {"storage_prefix", e.storage_prefix},
                           {"issuer", issuer_assignments.at(e.name)}});
    }
    j["experiments"] = exp_arr;
    auto asg_arr = nlohmann::json::array();
    for (const auto &a : assignments) {
        asg_arr.push_back(
            {{"user_id", a.user_id}, {"experiment", a.experiment}, {"role", a.role}});
    }
    j["assignments"] = asg_arr;
    auto rs_arr = nlohmann::json::array();
    for (const auto &[key, scopes] : role_scopes) {
        rs_arr.push_back({{"experiment", key.experiment},
                          {"role", key.role},
                          {"scopes", scope_strings(scopes)}});
    }
    j["role_scopes"] = rs_arr;
    return j;
}

Expected<RegistryState> RegistryState::from_json(const nlohmann::json &j) {
    RegistryState s;
    try {
        s.serial = j.at("serial").get<int64_t>();
        for (const auto &u : j.at("users")) {
            User user{u.at("user_id").get<std::string>(),
                      u.at("display_name").get<std::string>(), u.at("active").get<bool>()};
            s.users[user.user_id] = user;
        }
        for (const auto &e : j.at("experiments")) {
            Experiment exp{e.at("name").get<std::string>(),
                           e.at("dedicated_issuer").get<bool>(),
                           e.at("storage_prefix").get<std::string>()};
            s.experiments[exp.name] = exp;
            s.issuer_assignments[exp.name] = e.at("issuer").get<std::string>();
        }
        for (const auto &a : j.at("assignments")) {
            s.assignments.insert(Assignment{a.at("user_id").get<std::string>(),
                                            a.at("experiment").get<std::string>(),
                                            a.at("role").get<std::string>()});
        }
        for (const auto &r : j.at("role_scopes")) {
            std::vector<Scope> scopes;
            for (const auto &t : r.at("scopes")) {
                auto parsed = parse_scope(t.get<std::string>());
                if (!parsed.ok()) return parsed.error();
                scopes.push_back(parsed.value());
            }
            s.role_scopes[{r.at("experiment").get<std::string>(),
                           r.at("role").get<std::string>()}] = std::move(scopes);
        }
    } catch (const nlohmann::json::exception &e) {
        return Error{"invalid_state", e.what()};
    }
    auto inv = s.check_invariants();
    if (!inv.ok()) return inv.error();
    return s;
}

Expected<RegistryState> apply_change(const RegistryState &state, const Change &change) {
    RegistryState next = state;
    if (change.kind == "add_user") {
        if (change.user_id.empty()) return Error{"invalid_name", "empty user id"};
        if (next.users.count(change.user_id)) {
            return Error{"duplicate_add", "user exists: " + change.user_id};
        }
        next.users[change.user_id] = User{change.user_id, change.display_name, true};
    } else if (change.kind == "add_experiment") {
        if (!lower_alnum(change.experiment)) {
            return Error{"invalid_name", "experiment names are lowercase alphanumeric"};
        }
        if (next.experiments.count(change.experiment)) {
            return Error{"duplicate_add", "experiment exists: " + change.experiment};
        }
        Experiment e{change.experiment, change.dedicated_issuer, "/" + change.experiment};
        next.experiments[e.name] = e;
        next.issuer_assignments[e.name] = e.dedicated_issuer ? e.name : kSharedIssuer;
    } else if (change.kind == "assign_role") {
        if (!next.users.count(change.user_id)) {
            return Error{"dangling_reference", "unknown user: " + change.user_id};
        }
        if (!next.experiments.count(change.experiment)) {
            return Error{"dangling_reference", "unknown experiment: " + change.experiment};
        }
        if (!next.role_scopes.count({change.experiment, change.role})) {
            return Error{"dangling_reference",
                         "role has no scope set: " + change.experiment + "/" + change.role};
        }
        Assignment a{change.user_id, change.experiment, change.role};
        if (next.assignments.count(a)) {
            return Error{"duplicate_add", "assignment exists"};
        }
        next.assignments.insert(a);
    } else if (change.kind == "set_role_scopes") {
        if (!next.experiments.count(change.experiment)) {
            return Error{"dangling_reference", "unknown experiment: " + change.experiment};
        }
        if (!lower_alnum(change.role)) {
            return Error{"invalid_name", "role names are lowercase alphanumeric"};
        }
        if (change.scopes.empty()) {
            return Error{"invalid_change", "role needs at least one scope"};
        }
        next.role_scopes[{change.experiment, change.role}] = normalized(change.scopes);
    } else if (change.kind == "deactivate_user") {
        auto it = next.users.find(change.user_id);
        if (it == next.users.end()) {
            return Error{"dangling_reference", "unknown user: " + change.user_id};
        }
        it->second.active = false;
    } else {
        return Error{"invalid_change", "unknown change kind: " + change.kind};
    }
    next.serial = state.serial + 1;
    return next;
}

nlohmann::json export_directory(const RegistryState &state) {
    nlohmann::json doc;
    doc["serial"] = state.serial;

    std::set<RoleKey> referenced;
    auto part1 = nlohmann::json::array();
    for (const auto &[uid, user] : state.users) {
        if (!user.active) continue;
        auto affil = nlohmann::json::array();
        for (const auto &a : state.assignments) {
            if (a.user_id != uid) continue;
            affil.push_back({{"experiment", a.experiment}, {"role", a.role}});
            referenced.insert({a.experiment, a.role});
        }
        part1.push_back({{"user_id", uid}, {"affiliations", affil}});
    }
    doc["part1"] = part1;

    auto part2 = nlohmann::json::array();
    for (const auto &key : referenced) {
        part2.push_back({{"experiment", key.experiment},
                         {"role", key.role},
                         {"scopes", scope_strings(state.role_scopes.at(key))}});
    }
    doc["part2"] = part2;
    return doc;
}

std::vector<std::string> groups_for(const std::string &experiment, const std::string &role) {
    return {"/" + experiment, "/" + experiment + "/" + role};
}

nlohmann::json generate_configs(const RegistryState &state, const std::string &issuer_base_url) {
    nlohmann::json cfg;
    cfg["serial"] = state.serial;

    // issuer name -> member experiments (sorted by map order).
    std::map<std::string, std::vector<std::string>> members;
    for (const auto &[name, issuer] : state.issuer_assignments) {
        members[issuer].push_back(name);
    }

    auto issuers = nlohmann::json::array();
    for (const auto &[issuer, exps] : members) {
        nlohmann::json entry;
        entry["name"] = issuer;
        entry["url"] = issuer_base_url + "/" + issuer;
        entry["client_id"] = "client-" + issuer;
        entry["experiments"] = exps;
        auto rows = nlohmann::json::array();
        for (const auto &[key, scopes] : state.role_scopes) {
            if (state.issuer_assignments.at(key.experiment) != issuer) continue;
            rows.push_back({{"experiment", key.experiment},
                            {"role", key.role},
                            {"scopes", scope_strings(scopes)},
                            {"groups", groups_for(key.experiment, key.role)}});
        }
        entry["entries"] = rows;
        issuers.push_back(entry);
    }
    cfg["issuers"] = issuers;

    auto brokers = nlohmann::json::array();
    for (const auto &[name, exp] : state.experiments) {
        const std::string &issuer = state.issuer_assignments.at(name);
        std::vector<std::string> roles;
        for (const auto &[key, _] : state.role_scopes) {
            if (key.experiment == name) roles.push_back(key.role);
        }
        brokers.push_back({{"experiment", name},
                           {"issuer", issuer},
                           {"issuer_url", issuer_base_url + "/" + issuer},
                           {"client_id", "client-" + issuer},
                           {"roles", roles},
                           {"realm", name}});
        (void)exp;
    }
    cfg["brokers"] = brokers;
    return cfg;
}

ApiDecision authorize_api(const std::string &token, const Scope &required, const ApiTrust &trust,
                          int64_t now) {
    auto decoded = decode_unverified(token);
    if (!decoded.ok()) {
        return {false, "malformed: " + decoded.error().message, {}};
    }
    std::string iss = decoded.value().payload.value("iss", "");
    bool trusted = false;
    for (const auto &t : trust.issuers) {
        if (t == iss) trusted = true;
    }
    if (!trusted) {
        return {false, "untrusted issuer: " + iss, {}};
    }
    VerifyPolicy policy;
    policy.issuer = iss;
    policy.required_scopes = {required};
    auto v = verify(token, trust.keys, policy, now);
    if (!v.ok()) {
        return {false, std::string(to_string(v.error().kind)) + ": " + v.error().message, {}};
    }
    return {true, "", v.value()};
}

} // namespace gridauth

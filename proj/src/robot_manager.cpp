#include "gridauth/robot_manager.hpp"

#include <algorithm>
#include <filesystem>

#include "gridauth/fsutil.hpp"
#include "gridauth/secondary.hpp"

namespace gridauth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RobotRecord

json RobotRecord::to_json() const {
    json dests = json::array();
    for (const auto &d : destinations) dests.push_back({{"node", d.node}, {"path", d.path}});
    json last = json::object();
    for (const auto &[k, v] : last_success) last[k] = v;
    return json{{"principal", principal},   {"experiment", experiment},
                {"role", role},             {"key_file", key_file},
                {"credstores", credstores}, {"destinations", dests},
                {"last_success", last}};
}

Expected<RobotRecord> RobotRecord::from_json(const json &j) {
    if (!j.is_object()) return Error{"invalid_config", "robot record must be an object"};
    RobotRecord r;
    r.principal = j.value("principal", std::string());
    r.experiment = j.value("experiment", std::string());
    r.role = j.value("role", std::string());
    r.key_file = j.value("key_file", std::string());
    if (r.principal.empty() || r.experiment.empty())
        return Error{"invalid_config", "robot principal and experiment are required"};
    for (const auto &c : j.value("credstores", json::array()))
        r.credstores.push_back(c.get<std::string>());
    for (const auto &d : j.value("destinations", json::array())) {
        RobotDestination dest{d.value("node", std::string()), d.value("path", std::string())};
        if (dest.node.empty() || dest.path.empty())
            return Error{"invalid_config", "destinations need node and path"};
        r.destinations.push_back(dest);
    }
    if (r.credstores.empty() && r.destinations.empty())
        return Error{"invalid_config",
                     "a robot needs at least one credstore or destination node"};
    if (j.contains("last_success")) {
        for (const auto &[k, v] : j["last_success"].items())
            r.last_success[k] = v.get<int64_t>();
    }
    return r;
}

// ---------------------------------------------------------------------------
// LocalDirTransport

std::string LocalDirTransport::file_path(const std::string &node,
                                         const std::string &path) const {
    return root_ + "/" + node + "/" + path;
}

Status LocalDirTransport::push(const std::string &node, const std::string &path,
                               const std::string &content) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        if (unreachable_.count(node))
            return Error{"unreachable", "node " + node + " is not answering"};
        if (denied_.count(node))
            return Error{"permission_denied", "node " + node + " refused the write"};
    }
    std::string target = file_path(node, path);
    std::filesystem::path p(target);
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) return Error{"io_error", "mkdir " + p.parent_path().string() + ": " + ec.message()};

    bool abort_midway = false;
    {
        std::lock_guard<std::mutex> lk(mu_);
        abort_midway = midway_once_.erase(node) > 0;
    }
    AtomicFileWriter writer(target, 0600);
    if (auto s = writer.stage(content); !s.ok()) return s;
    if (abort_midway) {
        // Connection dropped after the temp file was written but before the
        // final rename; the writer rolls the temp file back.
        return Error{"unreachable", "transfer to " + node + " aborted midway"};
    }
    return writer.commit();
}

void LocalDirTransport::set_unreachable(const std::string &node, bool down) {
    std::lock_guard<std::mutex> lk(mu_);
    if (down)
        unreachable_.insert(node);
    else
        unreachable_.erase(node);
}

void LocalDirTransport::fail_midway_once(const std::string &node) {
    std::lock_guard<std::mutex> lk(mu_);
    midway_once_.insert(node);
}

void LocalDirTransport::deny_permission(const std::string &node, bool deny) {
    std::lock_guard<std::mutex> lk(mu_);
    if (deny)
        denied_.insert(node);
    else
        denied_.erase(node);
}

// ---------------------------------------------------------------------------
// RobotManager

RobotManager::RobotManager(Options opts, ClockPtr clock,
                           std::shared_ptr<PushTransport> transport)
    : opts_(std::move(opts)), clock_(std::move(clock)), transport_(std::move(transport)),
      log_(opts_.log_path) {}

std::string RobotManager::robot_id(const RobotRecord &r) {
    return r.principal + "-" + r.experiment + (r.role.empty() ? "" : "-" + r.role);
}

std::string RobotManager::token_path(const RobotRecord &r) const {
    return opts_.state_dir + "/tokens/" + robot_id(r) + ".json";
}

std::string RobotManager::key_path(const RobotRecord &r) const {
    return opts_.state_dir + "/keys/" + robot_id(r) + ".json";
}

Status RobotManager::load() {
    if (auto s = ensure_dir(opts_.state_dir); !s.ok()) return s;
    if (auto s = ensure_dir(opts_.state_dir + "/keys"); !s.ok()) return s;
    if (auto s = ensure_dir(opts_.state_dir + "/tokens"); !s.ok()) return s;
    std::lock_guard<std::mutex> lk(mu_);
    robots_.clear();
    tokens_.clear();
    auto text = read_file(opts_.state_dir + "/robots.json");
    if (!text) return ok_status(); // first start
    json doc = json::parse(*text, nullptr, false);
    if (doc.is_discarded() || !doc.is_array())
        return Error{"corrupt_state", "robots.json is not a JSON array"};
    for (const auto &entry : doc) {
        auto rec = RobotRecord::from_json(entry);
        if (!rec.ok()) return rec.error();
        if (auto tok = read_file(token_path(rec.value()))) {
            json t = json::parse(*tok, nullptr, false);
            if (t.is_object()) {
                tokens_[robot_id(rec.value())] =
                    TokenCache{t.value("secret", std::string()), t.value("issued_at", int64_t{0}),
                               t.value("expires_at", int64_t{0})};
            }
        }
        robots_.push_back(std::move(rec.value()));
    }
    return ok_status();
}

Status RobotManager::persist_records() {
    json doc = json::array();
    for (const auto &r : robots_) doc.push_back(r.to_json());
    return write_file_atomic(opts_.state_dir + "/robots.json", doc.dump(2) + "\n", 0600);
}

Status RobotManager::persist_token(const RobotRecord &r, const TokenCache &tok) {
    json doc{{"secret", tok.secret}, {"issued_at", tok.issued_at},
             {"expires_at", tok.expires_at}};
    return write_file_atomic(token_path(r), doc.dump(2) + "\n", 0600);
}

std::string RobotManager::token_file_content(const RobotRecord &r,
                                             const TokenCache &tok) const {
    // Same shape the token-client writes for its vt files, so a robot node
    // can hand the file straight to the client tooling.
    json doc{{"secret", tok.secret},
             {"expires_at", tok.expires_at},
             {"experiment", r.experiment},
             {"role", r.role},
             {"principal", r.principal},
             {"broker_url", opts_.broker_url}};
    return doc.dump(2) + "\n";
}

Expected<RobotManager::TokenCache> RobotManager::renew_token(const RobotRecord &r) {
    auto keytext = read_file(r.key_file);
    if (!keytext) return Error{"io_error", "cannot read key file " + r.key_file};
    json keydoc = json::parse(*keytext, nullptr, false);
    if (!keydoc.is_object() || !keydoc.contains("secret_hex"))
        return Error{"io_error", "key file " + r.key_file + " is malformed"};
    auto assertion = sign_assertion(r.principal, r.experiment, clock_->now(),
                                    keydoc["secret_hex"].get<std::string>());
    if (!assertion.ok()) return assertion.error();
    auto out = http_post_json(opts_.broker_url, "/v1/auth/secondary",
                              json{{"assertion", assertion.value().to_json()},
                                   {"experiment", r.experiment},
                                   {"role", r.role}});
    if (!out.ok()) return out.error();
    TokenCache tok;
    tok.secret = out.value().at("broker_token").get<std::string>();
    tok.issued_at = out.value().value("issued_at", clock_->now());
    tok.expires_at = out.value().at("expires_at").get<int64_t>();
    return tok;
}

Expected<RobotRecord> RobotManager::onboard(const json &robot_config,
                                            const std::string &admin_token,
                                            const std::function<void(const std::string &)> &browse) {
    auto rec = RobotRecord::from_json(robot_config);
    if (!rec.ok()) return rec.error();
    RobotRecord robot = std::move(rec.value());
    {
        std::lock_guard<std::mutex> lk(mu_);
        for (const auto &existing : robots_) {
            if (robot_id(existing) == robot_id(robot))
                return Error{"duplicate_robot", robot_id(robot) + " is already onboarded"};
        }
    }

    // 1) Operator-driven bootstrap at the broker.
    auto begun = http_post_json(opts_.broker_url, "/v1/auth/oidc/begin",
                                json{{"principal", robot.principal},
                                     {"experiment", robot.experiment},
                                     {"role", robot.role}});
    if (!begun.ok()) return begun.error();
    const std::string handle = begun.value().at("handle").get<std::string>();
    if (browse) browse(begun.value().at("auth_url").get<std::string>());
    auto polled = http_get_json(opts_.broker_url, "/v1/auth/oidc/poll/" + handle);
    if (!polled.ok()) return polled.error();
    const std::string status = polled.value().value("status", std::string());
    if (status != "complete")
        return Error{"auth_required", "bootstrap did not complete (status " + status + ")"};

    // 2) Generate the robot's long-lived key and enroll it.
    auto kp = SecondaryKeypair::generate();
    auto enrolled = http_post_json(opts_.broker_url, "/v1/admin/robot",
                                   json{{"principal", robot.principal},
                                        {"experiment", robot.experiment},
                                        {"role", robot.role},
                                        {"session", handle},
                                        {"secondary_public", kp.public_hex}},
                                   admin_token);
    if (!enrolled.ok()) return enrolled.error();

    // 3) Persist key, token, and record — only now, with everything in hand.
    std::lock_guard<std::mutex> lk(mu_);
    robot.key_file = key_path(robot);
    if (auto s = write_file_atomic(robot.key_file,
                                   json{{"principal", robot.principal},
                                        {"secret_hex", kp.secret_hex}}
                                           .dump(2) +
                                       "\n",
                                   0600);
        !s.ok())
        return s.error();
    TokenCache tok;
    tok.secret = polled.value().at("broker_token").get<std::string>();
    tok.issued_at = polled.value().value("issued_at", clock_->now());
    tok.expires_at = polled.value().at("expires_at").get<int64_t>();
    if (auto s = persist_token(robot, tok); !s.ok()) return s.error();
    tokens_[robot_id(robot)] = tok;
    robots_.push_back(robot);
    if (auto s = persist_records(); !s.ok()) return s.error();
    log_.write(json{{"event", "onboarded"}, {"robot", robot_id(robot)}}.dump());
    return robot;
}

nlohmann::json RobotManager::run_cycle() {
    std::lock_guard<std::mutex> lk(mu_);
    const int64_t now = clock_->now();
    json robots = json::array();

    auto classify = [](const std::string &code) {
        return code == "network" || code == "unreachable" || code == "issuer_unreachable" ||
                       code == "rate_limited"
                   ? "retriable"
                   : "permanent";
    };

    for (auto &robot : robots_) {
        const std::string id = robot_id(robot);
        json entry{{"robot", id}, {"principal", robot.principal},
                   {"experiment", robot.experiment}, {"role", robot.role}};
        TokenCache &tok = tokens_[id];

        // (1) Renew when the remaining lifetime crosses the threshold.
        if (tok.secret.empty() || tok.expires_at - now < opts_.renewal_threshold) {
            auto renewed = renew_token(robot);
            if (renewed.ok()) {
                tok = renewed.value();
                (void)persist_token(robot, tok);
                entry["renewal"] = {{"outcome", "renewed"}, {"expires_at", tok.expires_at}};
            } else {
                const std::string &code = renewed.error().code;
                entry["renewal"] = {{"outcome", "failed"},
                                    {"error", code},
                                    {"class", classify(code)}};
                // A refresh token the issuer no longer honors cannot be fixed
                // by retrying; a person must re-run the bootstrap.
                if (code == "bootstrap_required")
                    entry["renewal"]["operator_action_required"] = true;
            }
        } else {
            entry["renewal"] = {{"outcome", "kept"}, {"expires_at", tok.expires_at}};
        }

        const bool usable = !tok.secret.empty() && tok.expires_at > now;
        const std::string content = token_file_content(robot, tok);

        // (2) Store at every credstore.
        json stores = json::array();
        for (const auto &endpoint : robot.credstores) {
            json s{{"endpoint", endpoint}};
            if (!usable) {
                s["outcome"] = "skipped";
                s["error"] = "no usable broker token";
            } else {
                auto res = http_post_json(endpoint, "/v1/creds",
                                          json{{"owner", robot.principal},
                                               {"experiment", robot.experiment},
                                               {"role", robot.role},
                                               {"broker_token", tok.secret}});
                if (res.ok()) {
                    s["outcome"] = "stored";
                    robot.last_success["credstore:" + endpoint] = now;
                } else {
                    s["outcome"] = "failed";
                    s["error"] = res.error().code;
                    s["class"] = classify(res.error().code);
                }
            }
            log_.write(json{{"event", "store"}, {"robot", id}, {"detail", s}}.dump());
            stores.push_back(std::move(s));
        }
        entry["stores"] = stores;

        // (3) Push the token file to every destination node.
        json pushes = json::array();
        for (const auto &dest : robot.destinations) {
            json p{{"node", dest.node}, {"path", dest.path}};
            if (!usable) {
                p["outcome"] = "skipped";
                p["error"] = "no usable broker token";
            } else {
                auto res = transport_->push(dest.node, dest.path, content);
                if (res.ok()) {
                    p["outcome"] = "pushed";
                    robot.last_success["node:" + dest.node + ":" + dest.path] = now;
                } else {
                    p["outcome"] = "failed";
                    p["error"] = res.error().code;
                    p["class"] = classify(res.error().code);
                }
            }
            log_.write(json{{"event", "push"}, {"robot", id}, {"detail", p}}.dump());
            pushes.push_back(std::move(p));
        }
        entry["pushes"] = pushes;
        robots.push_back(std::move(entry));
    }
    (void)persist_records();
    return json{{"time", now}, {"robots", robots}};
}

json RobotManager::status() const {
    std::lock_guard<std::mutex> lk(mu_);
    const int64_t now = clock_->now();
    json out = json::array();
    for (const auto &robot : robots_) {
        const std::string id = robot_id(robot);
        auto it = tokens_.find(id);
        json entry = robot.to_json();
        entry["robot"] = id;
        entry["token_expires_at"] = it == tokens_.end() ? 0 : it->second.expires_at;
        entry["token_remaining"] = it == tokens_.end() ? 0 : it->second.expires_at - now;
        out.push_back(std::move(entry));
    }
    return json{{"time", now}, {"robots", out}};
}

size_t RobotManager::robot_count() const {
    std::lock_guard<std::mutex> lk(mu_);
    return robots_.size();
}

} // namespace gridauth

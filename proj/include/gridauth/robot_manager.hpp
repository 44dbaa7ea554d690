#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridauth/clock.hpp"
#include "gridauth/expected.hpp"
#include "gridauth/http_util.hpp"

namespace gridauth {

// A destination machine that receives the broker-token file.
struct RobotDestination {
    std::string node;
    std::string path;

    friend bool operator==(const RobotDestination &, const RobotDestination &) = default;
};

// One managed robot credential: who it is, where its tokens must land, and
// when each destination last succeeded.
struct RobotRecord {
    std::string principal;
    std::string experiment;
    std::string role;
    std::string key_file; // secondary signing key reference
    std::vector<std::string> credstores;
    std::vector<RobotDestination> destinations;
    std::map<std::string, int64_t> last_success; // destination id -> epoch

    nlohmann::json to_json() const;
    static Expected<RobotRecord> from_json(const nlohmann::json &j);
};

// Abstracts the copy-to-robot-node step. Placement must be all-or-nothing:
// after a failed push the destination still holds its previous content.
class PushTransport {
  public:
    virtual ~PushTransport() = default;
    // Error codes: unreachable (retriable), permission_denied (permanent).
    virtual Status push(const std::string &node, const std::string &path,
                        const std::string &content) = 0;
};

// Reference transport: each "node" is a directory under a local root.
// Failure injection covers the unreachable case and a mid-transfer abort
// that must leave the previous file intact.
class LocalDirTransport : public PushTransport {
  public:
    explicit LocalDirTransport(std::string root) : root_(std::move(root)) {}

    Status push(const std::string &node, const std::string &path,
                const std::string &content) override;

    void set_unreachable(const std::string &node, bool down);
    void fail_midway_once(const std::string &node);
    void deny_permission(const std::string &node, bool deny);
    std::string file_path(const std::string &node, const std::string &path) const;

  private:
    std::string root_;
    std::mutex mu_;
    std::set<std::string> unreachable_;
    std::set<std::string> midway_once_;
    std::set<std::string> denied_;
};

// Managed-credential daemon: onboards robots through one operator-driven
// OIDC bootstrap, then keeps every credstore and destination node supplied
// with a fresh broker token using only the robot's secondary key.
class RobotManager {
  public:
    struct Options {
        std::string state_dir; // robots.json, keys/, tokens/
        std::string broker_url;
        int64_t renewal_threshold = 86400; // renew below this remaining lifetime
        std::string log_path;              // one JSON line per outcome
    };

    RobotManager(Options opts, ClockPtr clock, std::shared_ptr<PushTransport> transport);

    // Rehydrates records and cached broker tokens from the state dir, so a
    // restarted daemon carries on where the old one stopped.
    Status load();

    // robot_config: {principal, experiment, role, credstores: [], destinations:
    // [{node, path}]}. Drives the broker bootstrap (browse receives the
    // consent URL), generates and enrolls the secondary key via the admin
    // token, and persists everything — or persists nothing on failure.
    // Errors: invalid_config, duplicate_robot, auth_required, access_denied,
    // network.
    Expected<RobotRecord> onboard(const nlohmann::json &robot_config,
                                  const std::string &admin_token,
                                  const std::function<void(const std::string &)> &browse);

    // One pass over all robots: renew when the broker token's remaining
    // lifetime drops below the threshold, then store at every credstore and
    // push to every destination. Per-robot and per-destination failures are
    // isolated and classified retriable/permanent.
    nlohmann::json run_cycle();

    nlohmann::json status() const;

    size_t robot_count() const;

  private:
    struct TokenCache {
        std::string secret;
        int64_t issued_at = 0;
        int64_t expires_at = 0;
    };

    static std::string robot_id(const RobotRecord &r);
    Status persist_records();
    Status persist_token(const RobotRecord &r, const TokenCache &tok);
    std::string token_path(const RobotRecord &r) const;
    std::string key_path(const RobotRecord &r) const;
    // The exact bytes every destination receives.
    std::string token_file_content(const RobotRecord &r, const TokenCache &tok) const;
    Expected<TokenCache> renew_token(const RobotRecord &r);

    Options opts_;
    ClockPtr clock_;
    std::shared_ptr<PushTransport> transport_;
    LineLog log_;
    mutable std::mutex mu_;
    std::vector<RobotRecord> robots_;
    std::map<std::string, TokenCache> tokens_; // robot id -> current broker token
};

} // namespace gridauth

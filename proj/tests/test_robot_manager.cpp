#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "gridauth/credstore.hpp"
#include "gridauth/fsutil.hpp"
#include "gridauth/robot_manager.hpp"
#include "rig.hpp"

using namespace gridauth;
using nlohmann::json;
using testrig::Rig;

namespace {

// Rig plus everything a managed robot credential touches: two credstore
// services, a directory-backed push transport standing in for the robot
// nodes, and the manager itself.
struct RobotRig {
    Rig rig;
    std::filesystem::path root;
    std::shared_ptr<LocalDirTransport> transport;
    HttpServerRunner cs1_runner, cs2_runner;
    std::unique_ptr<CredStoreService> cs1, cs2;
    std::unique_ptr<RobotManager> mgr;

    RobotRig() {
        root = std::filesystem::temp_directory_path() / ("robotmgr_test_" + random_token(6));
        std::filesystem::create_directories(root / "nodes");
        transport = std::make_shared<LocalDirTransport>((root / "nodes").string());

        CredStoreService::Options copts;
        copts.broker_url = rig.broker_runner.base_url();
        cs1 = std::make_unique<CredStoreService>(copts, rig.clock);
        cs2 = std::make_unique<CredStoreService>(copts, rig.clock);
        cs1->attach(cs1_runner.server());
        cs2->attach(cs2_runner.server());
        REQUIRE(cs1_runner.start() > 0);
        REQUIRE(cs2_runner.start() > 0);

        mgr = make_manager(86400);
    }

    ~RobotRig() {
        cs1_runner.stop();
        cs2_runner.stop();
        std::error_code ec;
        std::filesystem::remove_all(root, ec);
    }

    std::unique_ptr<RobotManager> make_manager(int64_t renewal_threshold) {
        RobotManager::Options opts;
        opts.state_dir = (root / "state").string();
        opts.broker_url = rig.broker_runner.base_url();
        opts.renewal_threshold = renewal_threshold;
        opts.log_path = (root / "robotmgr.log").string();
        auto m = std::make_unique<RobotManager>(opts, rig.clock, transport);
        REQUIRE(m->load().ok());
        return m;
    }

    json dunepro_config() const {
        return json{{"principal", "dunepro"},
                    {"experiment", "dune"},
                    {"role", "production"},
                    {"credstores",
                     json::array({cs1_runner.base_url(), cs2_runner.base_url()})},
                    {"destinations",
                     json::array({{{"node", "batch01"}, {"path", "creds/vt_dunepro"}}})}};
    }

    Expected<RobotRecord> onboard_dunepro(bool approve = true) {
        return mgr->onboard(dunepro_config(), rig.mint_admin("compute.modify"),
                            [&](const std::string &url) { rig.browse(url, approve); });
    }

    std::string dest_file() const {
        return transport->file_path("batch01", "creds/vt_dunepro");
    }

    json dest_doc() const {
        auto text = read_file(dest_file());
        REQUIRE(text.has_value());
        json doc = json::parse(*text, nullptr, false);
        REQUIRE(doc.is_object());
        return doc;
    }

    std::string state_path(const std::string &rel) const {
        return (root / "state" / rel).string();
    }
};

// Pulls the single robot entry out of a cycle report.
json entry_of(const json &report) {
    REQUIRE(report["robots"].is_array());
    REQUIRE(report["robots"].size() == 1);
    return report["robots"][0];
}

// Outcome of the store targeting one endpoint, asserting it appears once.
json store_for(const json &entry, const std::string &endpoint) {
    json found;
    int hits = 0;
    for (const auto &s : entry["stores"]) {
        if (s["endpoint"] == endpoint) {
            found = s;
            hits++;
        }
    }
    REQUIRE(hits == 1);
    return found;
}

} // namespace

TEST_CASE("onboarding persists a working robot and the first cycle supplies every target") {
    RobotRig t;
    const int64_t sessions_before = t.rig.broker->sessions_created();

    auto onboarded = t.onboard_dunepro();
    REQUIRE(onboarded.ok());
    CHECK(t.mgr->robot_count() == 1);
    // Exactly one interactive bootstrap paid for the whole enrollment.
    CHECK(t.rig.broker->sessions_created() == sessions_before + 1);

    SUBCASE("state files exist, are private, and carry the signing key") {
        const std::string key_file = t.state_path("keys/dunepro-dune-production.json");
        CHECK(onboarded.value().key_file == key_file);
        CHECK(file_mode(key_file) == 0600);
        CHECK(file_mode(t.state_path("tokens/dunepro-dune-production.json")) == 0600);

        json key = json::parse(read_file(key_file).value());
        CHECK(key["principal"] == "dunepro");
        CHECK(key["secret_hex"].get<std::string>().size() == 128);

        json records = json::parse(read_file(t.state_path("robots.json")).value());
        REQUIRE(records.is_array());
        REQUIRE(records.size() == 1);
        CHECK(records[0]["principal"] == "dunepro");
        CHECK(records[0]["key_file"] == key_file);
    }

    json entry = entry_of(t.mgr->run_cycle());

    SUBCASE("the report covers each configured target exactly once") {
        CHECK(entry["renewal"]["outcome"] == "kept");
        REQUIRE(entry["stores"].size() == 2);
        CHECK(store_for(entry, t.cs1_runner.base_url())["outcome"] == "stored");
        CHECK(store_for(entry, t.cs2_runner.base_url())["outcome"] == "stored");
        REQUIRE(entry["pushes"].size() == 1);
        CHECK(entry["pushes"][0]["node"] == "batch01");
        CHECK(entry["pushes"][0]["outcome"] == "pushed");
    }

    SUBCASE("the pushed file is a usable credential, not just bytes") {
        json doc = t.dest_doc();
        CHECK(doc["experiment"] == "dune");
        CHECK(doc["role"] == "production");
        CHECK(doc["principal"] == "dunepro");
        CHECK(doc["broker_url"] == t.rig.broker_runner.base_url());
        CHECK(file_mode(t.dest_file()) == 0600);
        // A fresh 7-day token: minted at onboarding time, clock unmoved since.
        CHECK(doc["expires_at"].get<int64_t>() - t.rig.clock->now() == 604800);
        // The secret actually exchanges at the broker for a 3-hour token.
        json ex = t.rig.exchange(doc["secret"]);
        CHECK(ex["expires_in"] == 10800);
        auto claims = t.rig.verify_token("dune", ex["access_token"]);
        CHECK(claims.sub == "dunepro");
    }

    SUBCASE("a credstore that received the credential can feed a job sandbox") {
        auto sandbox = t.root / "jobX";
        std::filesystem::create_directories(sandbox);
        httplib::Client c("127.0.0.1", t.cs1_runner.port());
        auto res = c.Post("/v1/jobs",
                          json{{"job_id", "jobX"},
                               {"owner", "dunepro"},
                               {"experiment", "dune"},
                               {"role", "production"},
                               {"sandbox", sandbox.string()},
                               {"scopes", "storage.read:/dune"}}
                              .dump(),
                          "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        auto token = read_file((sandbox / "bt_token").string());
        REQUIRE(token.has_value());
        auto claims = t.rig.verify_token("dune", std::string(*token, 0, token->size() - 1));
        CHECK(claims.exp - t.rig.clock->now() == 10800);
    }

    SUBCASE("every log line is a self-contained JSON record") {
        auto text = read_file((t.root / "robotmgr.log").string());
        REQUIRE(text.has_value());
        size_t lines = 0, pos = 0;
        while (pos < text->size()) {
            size_t nl = text->find('\n', pos);
            if (nl == std::string::npos) nl = text->size();
            json line = json::parse(text->substr(pos, nl - pos), nullptr, false);
            CHECK(line.is_object());
            CHECK(line.contains("event"));
            lines++;
            pos = nl + 1;
        }
        // onboarded + 2 stores + 1 push
        CHECK(lines == 4);
    }
}

TEST_CASE("a failed onboarding persists nothing") {
    RobotRig t;

    SUBCASE("config validation rejects incomplete robots") {
        json bad = t.dunepro_config();
        bad.erase("experiment");
        auto r = t.mgr->onboard(bad, t.rig.mint_admin("compute.modify"), nullptr);
        REQUIRE(!r.ok());
        CHECK(r.error().code == "invalid_config");

        json no_targets = json{{"principal", "dunepro"}, {"experiment", "dune"}};
        r = t.mgr->onboard(no_targets, t.rig.mint_admin("compute.modify"), nullptr);
        REQUIRE(!r.ok());
        CHECK(r.error().code == "invalid_config");

        json bad_dest = t.dunepro_config();
        bad_dest["destinations"] = json::array({{{"node", "batch01"}}});
        r = t.mgr->onboard(bad_dest, t.rig.mint_admin("compute.modify"), nullptr);
        REQUIRE(!r.ok());
        CHECK(r.error().code == "invalid_config");
    }

    SUBCASE("denied consent stops the enrollment") {
        auto r = t.onboard_dunepro(/*approve=*/false);
        REQUIRE(!r.ok());
        CHECK(r.error().code == "auth_required");
    }

    SUBCASE("an operator who never opens the link stops the enrollment") {
        auto r = t.mgr->onboard(t.dunepro_config(), t.rig.mint_admin("compute.modify"),
                                [](const std::string &) {});
        REQUIRE(!r.ok());
        CHECK(r.error().code == "auth_required");
    }

    SUBCASE("an admin token without the admin scope stops the enrollment") {
        auto r = t.mgr->onboard(t.dunepro_config(), t.rig.mint_admin("storage.read:/dune"),
                                [&](const std::string &url) { t.rig.browse(url, true); });
        REQUIRE(!r.ok());
        CHECK(r.error().code == "access_denied");
    }

    // Whatever the failure, no state may be left behind: a later retry must
    // start from a clean slate.
    CHECK(t.mgr->robot_count() == 0);
    CHECK(!read_file(t.state_path("robots.json")).has_value());
    for (const char *sub : {"keys", "tokens"}) {
        size_t entries = 0;
        for (auto &e : std::filesystem::directory_iterator(t.state_path(sub))) {
            (void)e;
            entries++;
        }
        CHECK(entries == 0);
    }
}

TEST_CASE("onboarding the same robot twice is refused before any network traffic") {
    RobotRig t;
    REQUIRE(t.onboard_dunepro().ok());
    const int64_t sessions_before = t.rig.broker->sessions_created();

    auto again = t.onboard_dunepro();
    REQUIRE(!again.ok());
    CHECK(again.error().code == "duplicate_robot");
    CHECK(t.rig.broker->sessions_created() == sessions_before);
    CHECK(t.mgr->robot_count() == 1);
}

TEST_CASE("a token inside the renewal threshold is renewed without a browser") {
    RobotRig t;
    REQUIRE(t.onboard_dunepro().ok());
    REQUIRE(entry_of(t.mgr->run_cycle())["renewal"]["outcome"] == "kept");
    const std::string old_secret = t.dest_doc()["secret"];
    const int64_t sessions_before = t.rig.broker->sessions_created();

    // 6.5 days in: 12 hours of lifetime left, below the 24-hour threshold.
    t.rig.clock->advance(561600);
    json entry = entry_of(t.mgr->run_cycle());
    CHECK(entry["renewal"]["outcome"] == "renewed");
    CHECK(entry["renewal"]["expires_at"].get<int64_t>() ==
          t.rig.clock->now() + 604800);
    CHECK(store_for(entry, t.cs1_runner.base_url())["outcome"] == "stored");
    CHECK(store_for(entry, t.cs2_runner.base_url())["outcome"] == "stored");
    CHECK(entry["pushes"][0]["outcome"] == "pushed");

    // The renewal ran on the secondary key alone — no new bootstrap session.
    CHECK(t.rig.broker->sessions_created() == sessions_before);

    json doc = t.dest_doc();
    CHECK(doc["secret"] != old_secret);
    CHECK(doc["expires_at"].get<int64_t>() - t.rig.clock->now() == 604800);
    CHECK(t.rig.exchange(doc["secret"])["expires_in"] == 10800);
}

TEST_CASE("failures at one target leave the others supplied") {
    RobotRig t;
    REQUIRE(t.onboard_dunepro().ok());

    SUBCASE("a credstore outage is retriable and heals on restart") {
        const int port = t.cs1_runner.port();
        const std::string down_url = t.cs1_runner.base_url();
        t.cs1_runner.stop();

        json entry = entry_of(t.mgr->run_cycle());
        json failed = store_for(entry, down_url);
        CHECK(failed["outcome"] == "failed");
        CHECK(failed["error"] == "network");
        CHECK(failed["class"] == "retriable");
        CHECK(store_for(entry, t.cs2_runner.base_url())["outcome"] == "stored");
        CHECK(entry["pushes"][0]["outcome"] == "pushed");

        REQUIRE(t.cs1_runner.start(port) == port);
        t.rig.clock->advance(60);
        entry = entry_of(t.mgr->run_cycle());
        CHECK(store_for(entry, down_url)["outcome"] == "stored");
    }

    SUBCASE("an unreachable node is retriable; stores are unaffected") {
        t.transport->set_unreachable("batch01", true);
        json entry = entry_of(t.mgr->run_cycle());
        CHECK(entry["pushes"][0]["outcome"] == "failed");
        CHECK(entry["pushes"][0]["error"] == "unreachable");
        CHECK(entry["pushes"][0]["class"] == "retriable");
        CHECK(store_for(entry, t.cs1_runner.base_url())["outcome"] == "stored");
        CHECK(!std::filesystem::exists(t.dest_file()));

        t.transport->set_unreachable("batch01", false);
        t.rig.clock->advance(60);
        entry = entry_of(t.mgr->run_cycle());
        CHECK(entry["pushes"][0]["outcome"] == "pushed");
        CHECK(std::filesystem::exists(t.dest_file()));
    }

    SUBCASE("a node that refuses the write is a permanent failure") {
        t.transport->deny_permission("batch01", true);
        json entry = entry_of(t.mgr->run_cycle());
        CHECK(entry["pushes"][0]["outcome"] == "failed");
        CHECK(entry["pushes"][0]["error"] == "permission_denied");
        CHECK(entry["pushes"][0]["class"] == "permanent");
    }
}

TEST_CASE("steady-state cycles rewrite the destination byte for byte") {
    RobotRig t;
    REQUIRE(t.onboard_dunepro().ok());
    REQUIRE(entry_of(t.mgr->run_cycle())["renewal"]["outcome"] == "kept");
    const std::string before = read_file(t.dest_file()).value();

    t.rig.clock->advance(3600); // well outside the renewal threshold
    json entry = entry_of(t.mgr->run_cycle());
    CHECK(entry["renewal"]["outcome"] == "kept");
    CHECK(read_file(t.dest_file()).value() == before);
}

TEST_CASE("an interrupted push leaves the previous file intact") {
    RobotRig t;
    REQUIRE(t.onboard_dunepro().ok());
    t.mgr->run_cycle();
    const std::string before = read_file(t.dest_file()).value();

    // Deep into the renewal window so the next cycle produces new content,
    // then drop the connection mid-transfer.
    t.rig.clock->advance(561600);
    t.transport->fail_midway_once("batch01");
    json entry = entry_of(t.mgr->run_cycle());
    CHECK(entry["renewal"]["outcome"] == "renewed");
    CHECK(entry["pushes"][0]["outcome"] == "failed");
    CHECK(entry["pushes"][0]["error"] == "unreachable");
    CHECK(entry["pushes"][0]["class"] == "retriable");

    // All-or-nothing: the old credential is still there, whole, and it is
    // the only file in the directory (no half-written temp left behind).
    CHECK(read_file(t.dest_file()).value() == before);
    size_t files = 0;
    for (auto &e :
         std::filesystem::directory_iterator(std::filesystem::path(t.dest_file()).parent_path())) {
        CHECK(e.path().filename() == "vt_dunepro");
        files++;
    }
    CHECK(files == 1);

    // The retry on the next cycle delivers the renewed token.
    t.rig.clock->advance(60);
    entry = entry_of(t.mgr->run_cycle());
    CHECK(entry["pushes"][0]["outcome"] == "pushed");
    const std::string after = read_file(t.dest_file()).value();
    CHECK(after != before);
    CHECK(t.rig.exchange(json::parse(after)["secret"])["expires_in"] == 10800);
}

TEST_CASE("a month of six-hour cycles keeps every target fresh with zero new bootstraps") {
    RobotRig t;
    REQUIRE(t.onboard_dunepro().ok());
    const int64_t sessions_after_onboard = t.rig.broker->sessions_created();

    // Renew once less than six days remain, i.e. once the token is a day
    // old. Checked every six hours, the destination then never holds a token
    // with less than 7d - 24h - 6h of life in it.
    const int64_t threshold = 518400;
    const int64_t step = 21600;
    auto mgr = t.make_manager(threshold);
    REQUIRE(mgr->robot_count() == 1);

    int renewals = 0;
    int64_t min_remaining = INT64_MAX;
    for (int cycle = 1; cycle <= 120; cycle++) {
        t.rig.clock->advance(step);
        json entry = entry_of(mgr->run_cycle());

        const std::string outcome = entry["renewal"]["outcome"];
        REQUIRE((outcome == "kept" || outcome == "renewed"));
        if (outcome == "renewed") renewals++;
        REQUIRE(store_for(entry, t.cs1_runner.base_url())["outcome"] == "stored");
        REQUIRE(store_for(entry, t.cs2_runner.base_url())["outcome"] == "stored");
        REQUIRE(entry["pushes"][0]["outcome"] == "pushed");

        const int64_t remaining =
            t.dest_doc()["expires_at"].get<int64_t>() - t.rig.clock->now();
        min_remaining = std::min(min_remaining, remaining);
        REQUIRE(remaining >= 604800 - 86400 - step);
        REQUIRE(remaining <= 604800);
    }

    // The token ages past one day at the first cycle after 86400s; with
    // six-hour checks that is every 108000s, so 30 days hold exactly
    // 2592000 / 108000 = 24 renewals.
    CHECK(renewals == 24);
    CHECK(min_remaining >= 604800 - 86400 - step);

    // Every renewal used the enrolled key; nobody had to open a browser.
    CHECK(t.rig.broker->sessions_created() == sessions_after_onboard);

    // The credential at the destination is still live at the end.
    CHECK(t.rig.exchange(t.dest_doc()["secret"])["expires_in"] == 10800);
}

TEST_CASE("a restarted manager resumes from its state directory") {
    RobotRig t;
    REQUIRE(t.onboard_dunepro().ok());
    t.mgr->run_cycle();
    const std::string before = read_file(t.dest_file()).value();
    const int64_t expires_at = t.dest_doc()["expires_at"];

    t.mgr.reset();
    auto mgr2 = t.make_manager(86400);
    REQUIRE(mgr2->robot_count() == 1);

    json st = mgr2->status();
    REQUIRE(st["robots"].size() == 1);
    CHECK(st["robots"][0]["robot"] == "dunepro-dune-production");
    CHECK(st["robots"][0]["token_expires_at"].get<int64_t>() == expires_at);
    CHECK(st["robots"][0]["token_remaining"].get<int64_t>() ==
          expires_at - t.rig.clock->now());

    // Nothing due: the successor rewrites identical bytes.
    t.rig.clock->advance(3600);
    json entry = entry_of(mgr2->run_cycle());
    CHECK(entry["renewal"]["outcome"] == "kept");
    CHECK(read_file(t.dest_file()).value() == before);

    // The persisted key still renews once the threshold is crossed.
    t.rig.clock->advance(558000);
    entry = entry_of(mgr2->run_cycle());
    CHECK(entry["renewal"]["outcome"] == "renewed");
    CHECK(t.rig.exchange(t.dest_doc()["secret"])["expires_in"] == 10800);
}

TEST_CASE("a robot whose refresh record died is flagged for an operator") {
    RobotRig t;
    REQUIRE(t.onboard_dunepro().ok());

    // 35 days of silence: broker token long gone, and the issuer-side
    // refresh record (28-day lifetime) has expired too.
    t.rig.clock->advance(3024000);
    json entry = entry_of(t.mgr->run_cycle());
    CHECK(entry["renewal"]["outcome"] == "failed");
    CHECK(entry["renewal"]["error"] == "bootstrap_required");
    CHECK(entry["renewal"]["class"] == "permanent");
    CHECK(entry["renewal"]["operator_action_required"] == true);

    // Without a usable token nothing is stored or pushed — but the cycle
    // still reports every target rather than aborting.
    for (const auto &s : entry["stores"]) CHECK(s["outcome"] == "skipped");
    CHECK(entry["pushes"][0]["outcome"] == "skipped");
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "gridauth/credstore.hpp"
#include "gridauth/fsutil.hpp"
#include "helpers.hpp"
#include "rig.hpp"

using namespace gridauth;
using nlohmann::json;
using testrig::Rig;

namespace {

// Rig plus a credstore service wired to the broker, with sandbox dirs on
// disk and an HTTP front end.
struct CredRig {
    Rig rig;
    HttpServerRunner runner;
    std::unique_ptr<CredStoreService> svc;
    std::filesystem::path root;

    CredRig() {
        root = std::filesystem::temp_directory_path() / ("credstore_test_" + random_token(6));
        std::filesystem::create_directories(root);
        CredStoreService::Options opts;
        opts.broker_url = rig.broker_runner.base_url();
        svc = std::make_unique<CredStoreService>(opts, rig.clock);
        svc->attach(runner.server());
        REQUIRE(runner.start() > 0);
    }
    ~CredRig() {
        runner.stop();
        std::error_code ec;
        std::filesystem::remove_all(root, ec);
    }

    httplib::Client http() { return httplib::Client("127.0.0.1", runner.port()); }

    std::string sandbox(const std::string &name) {
        auto p = root / name;
        std::filesystem::create_directories(p);
        return p.string();
    }

    std::string broker_token_for(const std::string &principal, const std::string &experiment,
                                 const std::string &role) {
        json done = rig.bootstrap(principal, experiment, role);
        REQUIRE(done["status"] == "complete");
        return done["broker_token"];
    }

    json store(const std::string &owner, const std::string &experiment, const std::string &role,
               const std::string &token, int expect_status = 200) {
        auto c = http();
        auto res = c.Post("/v1/creds",
                          json{{"owner", owner},
                               {"experiment", experiment},
                               {"role", role},
                               {"broker_token", token}}
                              .dump(),
                          "application/json");
        REQUIRE(res);
        REQUIRE(res->status == expect_status);
        return json::parse(res->body);
    }

    json attach(const json &reg, int expect_status = 200) {
        auto c = http();
        auto res = c.Post("/v1/jobs", reg.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == expect_status);
        return json::parse(res->body);
    }

    json cycle(int64_t advance = 0) {
        auto c = http();
        auto res = c.Post("/v1/cycle", json{{"advance", advance}}.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        return json::parse(res->body);
    }

    json sandbox_claims(const std::string &sandbox_path) {
        auto text = read_file(sandbox_path + "/bt_token");
        REQUIRE(text);
        std::string tok = *text;
        while (!tok.empty() && tok.back() == '\n') tok.pop_back();
        return decode_unverified(tok).value().payload;
    }
};

json action_for(const json &report, const std::string &job_id) {
    for (const auto &a : report["actions"]) {
        if (a["job_id"] == job_id) return a;
    }
    FAIL("no action for job ", job_id);
    return {};
}

} // namespace

TEST_CASE("store validates with a probe and reports replacement honestly") {
    CredRig cr;
    std::string tok = cr.broker_token_for("alice", "dune", "production");

    auto first = cr.store("alice", "dune", "production", tok);
    CHECK(first["replaced"] == false);

    auto second = cr.store("alice", "dune", "production", tok);
    CHECK(second["replaced"] == true);

    auto junk = cr.store("alice", "dune", "production", "not-a-broker-token", 400);
    CHECK(junk["error"] == "invalid_credential");

    // An expired broker token fails the probe the same way.
    cr.rig.clock->advance(8 * 86400);
    auto stale = cr.store("alice", "dune", "production", tok, 400);
    CHECK(stale["error"] == "invalid_credential");
}

TEST_CASE("attach materializes a verifiable token in the sandbox") {
    CredRig cr;
    std::string tok = cr.broker_token_for("alice", "dune", "production");
    cr.store("alice", "dune", "production", tok);
    std::string box = cr.sandbox("job1");

    auto out = cr.attach(json{{"job_id", "job1"},
                              {"owner", "alice"},
                              {"experiment", "dune"},
                              {"role", "production"},
                              {"sandbox", box},
                              {"scopes", "storage.read:/dune"},
                              {"lead_time", 600}});
    CHECK(out["expires_at"].get<int64_t>() - cr.rig.clock->now() == 10800);

    // The sandbox file holds exactly one token, owner-only, and it verifies
    // offline against the issuer's published keys with the requested scope.
    CHECK(file_mode(box + "/bt_token") == 0600);
    std::string token = *read_file(box + "/bt_token");
    token.pop_back(); // trailing newline
    auto claims = cr.rig.verify_token("dune", token);
    CHECK(claims.sub == "alice");
    CHECK(scope_claim(claims.scopes) == "storage.read:/dune");

    SUBCASE("attach without a credential is a 404") {
        auto missing = cr.attach(json{{"job_id", "job2"},
                                      {"owner", "bob"},
                                      {"experiment", "gm2"},
                                      {"role", "analysis"},
                                      {"sandbox", cr.sandbox("job2")}},
                                 404);
        CHECK(missing["error"] == "no_credential");
    }

    SUBCASE("scopes outside the grant surface the downscope refusal") {
        auto refused = cr.attach(json{{"job_id", "job3"},
                                      {"owner", "alice"},
                                      {"experiment", "dune"},
                                      {"role", "production"},
                                      {"sandbox", cr.sandbox("job3")},
                                      {"scopes", "storage.modify:/dune"}},
                                 403);
        CHECK(refused["error"] == "downscope_refused");
        CHECK(refused["error_description"].get<std::string>().find("storage.modify:/dune") !=
              std::string::npos);
    }

    SUBCASE("lead time must fit inside the access-token lifetime") {
        auto bad = cr.attach(json{{"job_id", "job4"},
                                  {"owner", "alice"},
                                  {"experiment", "dune"},
                                  {"role", "production"},
                                  {"sandbox", cr.sandbox("job4")},
                                  {"lead_time", 10800}},
                             400);
        CHECK(bad["error"] == "invalid_lead_time");

        auto too_small = cr.attach(json{{"job_id", "job5"},
                                        {"owner", "alice"},
                                        {"experiment", "dune"},
                                        {"role", "production"},
                                        {"sandbox", cr.sandbox("job5")},
                                        {"lead_time", 300}},
                                   400);
        CHECK(too_small["error"] == "invalid_lead_time");
    }

    SUBCASE("a bogus sandbox is rejected up front") {
        auto bad = cr.attach(json{{"job_id", "job6"},
                                  {"owner", "alice"},
                                  {"experiment", "dune"},
                                  {"role", "production"},
                                  {"sandbox", (cr.root / "missing").string()}},
                             400);
        CHECK(bad["error"] == "invalid_sandbox");
    }
}

TEST_CASE("the refresh cycle acts only inside the lead window") {
    CredRig cr;
    std::string tok = cr.broker_token_for("alice", "dune", "production");
    cr.store("alice", "dune", "production", tok);
    std::string box = cr.sandbox("jobA");
    cr.attach(json{{"job_id", "jobA"},
                   {"owner", "alice"},
                   {"experiment", "dune"},
                   {"role", "production"},
                   {"sandbox", box},
                   {"lead_time", 600}});

    // Two hours in: remaining 1 h, far outside the 10-minute lead window.
    auto idle = cr.cycle(2 * 3600);
    CHECK(action_for(idle, "jobA")["action"] == "none");

    // 55 more minutes: remaining 5 min < 10 min lead. Refresh restores the
    // full 3-hour lifetime.
    auto acted = cr.cycle(55 * 60);
    auto a = action_for(acted, "jobA");
    CHECK(a["action"] == "refreshed");
    CHECK(a["expires_at"].get<int64_t>() - cr.rig.clock->now() == 10800);
    CHECK(cr.sandbox_claims(box)["exp"] == a["expires_at"]);
}

TEST_CASE("an expired broker token flags needs-renewal and leaves the sandbox intact") {
    CredRig cr;
    std::string tok = cr.broker_token_for("alice", "dune", "production");
    cr.store("alice", "dune", "production", tok);
    std::string box = cr.sandbox("jobA");
    cr.attach(json{{"job_id", "jobA"},
                   {"owner", "alice"},
                   {"experiment", "dune"},
                   {"role", "production"},
                   {"sandbox", box}});
    std::string before = *read_file(box + "/bt_token");

    // Eight days later the broker token is long dead.
    auto rep = cr.cycle(8 * 86400);
    auto a = action_for(rep, "jobA");
    CHECK(a["action"] == "needs-renewal");
    CHECK(a["error"] == "broker_token_expired");
    CHECK(*read_file(box + "/bt_token") == before); // untouched

    auto c = cr.http();
    auto report = json::parse(c.Get("/v1/report")->body);
    CHECK(report["jobs"][0]["needs_renewal"] == true);

    // A freshly stored credential heals it on the next cycle.
    json again = cr.rig.bootstrap("alice", "dune", "production");
    cr.store("alice", "dune", "production", again["broker_token"]);
    auto healed = cr.cycle();
    CHECK(action_for(healed, "jobA")["action"] == "refreshed");
    CHECK(*read_file(box + "/bt_token") != before);
}

TEST_CASE("failure in one job never disturbs another's refresh in the same cycle") {
    // Limit of 2 exchanges per principal per minute: alice's budget can be
    // exhausted while bob's stays open.
    CredRig cr;
    // Rebuild the broker config with a tight limit via the admin endpoint.
    {
        auto bhttp = cr.rig.broker_http();
        httplib::Headers admin{
            {"Authorization", "Bearer " + cr.rig.mint_admin("compute.modify")}};
        json doc = cr.rig.config_doc();
        doc["rate_limit_per_min"] = 2;
        auto res = bhttp.Post("/v1/admin/config", admin, doc.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
    }

    std::string tok_a = cr.broker_token_for("alice", "dune", "production");
    std::string tok_b = cr.broker_token_for("bob", "gm2", "analysis");
    cr.store("alice", "dune", "production", tok_a); // probe: alice 1/2
    cr.store("bob", "gm2", "analysis", tok_b);      // probe: bob 1/2
    cr.attach(json{{"job_id", "jobA"},
                   {"owner", "alice"},
                   {"experiment", "dune"},
                   {"role", "production"},
                   {"sandbox", cr.sandbox("jobA")}}); // alice 2/2
    cr.attach(json{{"job_id", "jobB"},
                   {"owner", "bob"},
                   {"experiment", "gm2"},
                   {"role", "analysis"},
                   {"sandbox", cr.sandbox("jobB")}}); // bob 2/2

    // Land exactly at the next minute boundary plus a hair less than three
    // hours: both jobs are inside their lead window, both principals have a
    // fresh budget of 2, and alice's gets burned before the cycle runs.
    int64_t now = cr.rig.clock->now();
    int64_t target = ((now / 60) + 1) * 60 + 10500;
    cr.rig.clock->set(target);
    cr.rig.exchange(tok_a);
    cr.rig.exchange(tok_a); // alice's budget for this minute is now gone

    auto rep = cr.cycle();
    CHECK(action_for(rep, "jobA")["action"] == "failed");
    CHECK(action_for(rep, "jobA")["error"] == "rate_limited");
    CHECK(action_for(rep, "jobB")["action"] == "refreshed");

    // Next minute, the failed job recovers on its own.
    auto next = cr.cycle(60);
    CHECK(action_for(next, "jobA")["action"] == "refreshed");
}

TEST_CASE("24 simulated hours of 15-minute cycles keep every sandbox token live") {
    CredRig cr;
    std::string tok_a = cr.broker_token_for("alice", "dune", "production");
    std::string tok_b = cr.broker_token_for("bob", "gm2", "analysis");
    cr.store("alice", "dune", "production", tok_a);
    cr.store("bob", "gm2", "analysis", tok_b);

    const int64_t lead = 1800, step = 900;
    struct JobSpec {
        std::string id, sandbox;
    };
    std::vector<JobSpec> jobs = {{"a1", cr.sandbox("a1")},
                                 {"a2", cr.sandbox("a2")},
                                 {"b1", cr.sandbox("b1")}};
    cr.attach(json{{"job_id", "a1"}, {"owner", "alice"}, {"experiment", "dune"},
                   {"role", "production"}, {"sandbox", jobs[0].sandbox},
                   {"scopes", "storage.read:/dune"}, {"lead_time", lead}});
    cr.attach(json{{"job_id", "a2"}, {"owner", "alice"}, {"experiment", "dune"},
                   {"role", "production"}, {"sandbox", jobs[1].sandbox},
                   {"lead_time", lead}});
    cr.attach(json{{"job_id", "b1"}, {"owner", "bob"}, {"experiment", "gm2"},
                   {"role", "analysis"}, {"sandbox", jobs[2].sandbox},
                   {"lead_time", lead}});

    int refreshes = 0;
    for (int tick = 0; tick < 96; ++tick) { // 96 * 15 min = 24 h
        auto rep = cr.cycle(step);
        int64_t now = cr.rig.clock->now();
        for (const auto &j : jobs) {
            auto a = action_for(rep, j.id);
            CHECK((a["action"] == "none" || a["action"] == "refreshed"));
            if (a["action"] == "refreshed") ++refreshes;
            // Liveness: after every cycle the sandbox token always has at
            // least (lead - step) seconds left.
            int64_t exp = cr.sandbox_claims(j.sandbox)["exp"];
            CHECK(exp - now >= lead - step);
            CHECK(exp - now <= 10800);
        }
    }
    // 24 h on a 3 h token with a 30-minute lead: roughly one refresh per
    // 2.75 h per job — sanity-check the order of magnitude, not the exact
    // count.
    CHECK(refreshes >= 3 * 7);
    CHECK(refreshes <= 3 * 12);
}

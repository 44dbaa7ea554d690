// gridauthd: a self-contained demo stack on loopback — registry, issuer,
// broker, credstore, and a mock publication endpoint — seeded with two
// experiments so the client tools have something real to talk to.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"

#include "gridauth/broker.hpp"
#include "gridauth/clock.hpp"
#include "gridauth/credstore.hpp"
#include "gridauth/fsutil.hpp"
#include "gridauth/issuer.hpp"
#include "gridauth/jwt.hpp"
#include "gridauth/registry_service.hpp"
#include "gridauth/rng.hpp"
#include "gridauth/secret_store.hpp"

using namespace gridauth;
using nlohmann::json;

namespace {

std::atomic<bool> stop_requested{false};

void handle_signal(int) { stop_requested = true; }

std::string bearer_of(const httplib::Request &req) {
    auto h = req.get_header_value("Authorization");
    return h.rfind("Bearer ", 0) == 0 ? h.substr(7) : std::string();
}

// Two experiments, three people, one robot: enough to exercise every flow.
std::vector<Change> demo_changes() {
    return {Change::add_experiment("dune", true),
            Change::add_experiment("gm2", false),
            Change::set_role_scopes("dune", "production",
                                    {parse_scope("compute.create").value(),
                                     parse_scope("storage.read:/dune").value(),
                                     parse_scope("storage.create:/dune/scratch").value()}),
            Change::set_role_scopes("gm2", "analysis",
                                    {parse_scope("storage.read:/gm2").value()}),
            Change::add_user("alice", "Alice"),
            Change::add_user("bob", "Bob"),
            Change::add_user("dunepro", "DUNE production robot"),
            Change::assign_role("alice", "dune", "production"),
            Change::assign_role("dunepro", "dune", "production"),
            Change::assign_role("bob", "gm2", "analysis")};
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"All-in-one demo deployment of the token-auth stack"};
    std::string data_dir = "gridauthd-data";
    int issuer_port = 8601, broker_port = 8602, credstore_port = 8603, registry_port = 8604,
        publish_port = 8605;
    app.add_option("--data-dir", data_dir, "State directory");
    app.add_option("--issuer-port", issuer_port, "Issuer port (0 = ephemeral)");
    app.add_option("--broker-port", broker_port, "Broker port");
    app.add_option("--credstore-port", credstore_port, "Credstore port");
    app.add_option("--registry-port", registry_port, "Registry port");
    app.add_option("--publish-port", publish_port, "Publication endpoint port");
    CLI11_PARSE(app, argc, argv);

    auto clock = std::make_shared<SystemClock>();
    if (auto s = ensure_dir(data_dir); !s.ok()) {
        std::fprintf(stderr, "gridauthd: %s\n", s.error().message.c_str());
        return 1;
    }

    HttpServerRunner issuer_runner, broker_runner, credstore_runner, registry_runner,
        publish_runner;
    if (issuer_runner.bind(issuer_port) <= 0 || broker_runner.bind(broker_port) <= 0 ||
        credstore_runner.bind(credstore_port) <= 0 ||
        registry_runner.bind(registry_port) <= 0 || publish_runner.bind(publish_port) <= 0) {
        std::fprintf(stderr, "gridauthd: failed to bind a port\n");
        return 1;
    }

    // One operator key signs admin tokens accepted by registry and broker.
    auto admin_key = SigningKey::generate("operator", "ES256").value();
    ApiTrust admin_trust;
    if (auto s = admin_trust.keys.add(admin_key.public_jwk().value()); !s.ok()) {
        std::fprintf(stderr, "gridauthd: %s\n", s.error().message.c_str());
        return 1;
    }
    admin_trust.issuers = {"https://operator.local"};
    const Scope admin_scope = parse_scope("compute.modify").value();

    // Registry, seeded on first start.
    RegistryService::Options ropts;
    ropts.data_dir = data_dir + "/registry";
    ropts.trust = admin_trust;
    ropts.admin_scope = admin_scope;
    ropts.issuer_base_url = issuer_runner.base_url();
    (void)ensure_dir(ropts.data_dir);
    RegistryService registry(ropts, clock);
    if (auto s = registry.load(); !s.ok()) {
        std::fprintf(stderr, "gridauthd: registry: %s\n", s.error().message.c_str());
        return 1;
    }
    if (registry.state()->serial == 0) {
        for (const auto &c : demo_changes()) {
            if (auto s = registry.submit(c); !s.ok()) {
                std::fprintf(stderr, "gridauthd: seeding: %s\n", s.error().message.c_str());
                return 1;
            }
        }
    }
    json configs = generate_configs(*registry.state(), issuer_runner.base_url());

    // Issuer.
    IssuerService::Options iopts;
    iopts.base_url = issuer_runner.base_url();
    IssuerService issuer(iopts, clock);
    if (!issuer.configure(configs["issuers"]).ok() ||
        !issuer.set_directory(export_directory(*registry.state())).ok()) {
        std::fprintf(stderr, "gridauthd: issuer configuration failed\n");
        return 1;
    }
    std::map<std::string, std::string> secrets;
    for (const auto &iss : configs["issuers"]) {
        const std::string name = iss["name"];
        auto secret = issuer.register_client(name, "client-" + name);
        if (!secret.ok()) {
            std::fprintf(stderr, "gridauthd: client registration failed\n");
            return 1;
        }
        secrets[name] = secret.value();
    }

    // Broker, with a persistent master key for its secret store.
    std::string master_key;
    if (auto existing = read_file(data_dir + "/master.key")) {
        master_key = *existing;
        while (!master_key.empty() && master_key.back() == '\n') master_key.pop_back();
    } else {
        master_key = SecretStore::generate_master_key_hex();
        if (auto s = write_file_atomic(data_dir + "/master.key", master_key + "\n", 0600);
            !s.ok()) {
            std::fprintf(stderr, "gridauthd: %s\n", s.error().message.c_str());
            return 1;
        }
    }
    BrokerService::Options bopts;
    bopts.data_dir = data_dir + "/broker";
    (void)ensure_dir(bopts.data_dir);
    bopts.master_key_hex = master_key;
    bopts.base_url = broker_runner.base_url();
    bopts.admin_trust = admin_trust;
    bopts.admin_scope = admin_scope;
    bopts.log_path = data_dir + "/broker.log";
    BrokerService broker(bopts, clock);
    json broker_cfg = json{{"experiments", json::array()}};
    for (const auto &b : configs["brokers"]) {
        json e = b;
        e["client_secret"] = secrets.at(b["issuer"].get<std::string>());
        broker_cfg["experiments"].push_back(e);
    }
    if (auto s = broker.init(broker_cfg); !s.ok()) {
        std::fprintf(stderr, "gridauthd: broker: %s\n", s.error().message.c_str());
        return 1;
    }

    // Credstore.
    CredStoreService::Options copts;
    copts.broker_url = broker_runner.base_url();
    copts.log_path = data_dir + "/credstore.log";
    CredStoreService credstore(copts, clock);

    // Publication endpoint: accepts uploads bearing compute.create from a
    // configured issuer — the resource-server side of the scope model.
    ApiTrust pub_trust;
    for (const auto &iss : configs["issuers"]) {
        const std::string name = iss["name"];
        pub_trust.issuers.push_back(issuer.issuer_url(name));
        json jwks_doc = issuer.jwks(name).value();
        for (const auto &k : jwks_doc["keys"]) {
            auto jwk = Jwk::from_json(k);
            if (jwk.ok()) (void)pub_trust.keys.add(jwk.value());
        }
    }
    const Scope publish_scope = parse_scope("compute.create").value();
    publish_runner.server().Post(
        "/v1/publish", [&](const httplib::Request &req, httplib::Response &res) {
            auto d = authorize_api(bearer_of(req), publish_scope, pub_trust, clock->now());
            if (!d.allow) return send_error(res, 401, "access_denied", d.reason);
            send_json(res, 200, {{"accepted", true}, {"publisher", d.claims.sub}});
        });

    registry.attach(registry_runner.server());
    issuer.attach(issuer_runner.server());
    broker.attach(broker_runner.server());
    credstore.attach(credstore_runner.server());
    if (registry_runner.serve() <= 0 || issuer_runner.serve() <= 0 ||
        broker_runner.serve() <= 0 || credstore_runner.serve() <= 0 ||
        publish_runner.serve() <= 0) {
        std::fprintf(stderr, "gridauthd: failed to start a server\n");
        return 1;
    }

    // A day-scoped admin token so robotmgr onboard works out of the box.
    ClaimSet admin_claims;
    admin_claims.iss = "https://operator.local";
    admin_claims.sub = "operator";
    admin_claims.aud = {kAnyAudience};
    admin_claims.iat = clock->now();
    admin_claims.nbf = admin_claims.iat;
    admin_claims.exp = admin_claims.iat + 86400;
    admin_claims.jti = random_token(8);
    admin_claims.scopes = parse_scope_claim("compute.modify").value();
    auto admin_token = mint(admin_claims, admin_key);
    if (admin_token.ok())
        (void)write_file_atomic(data_dir + "/admin-token", admin_token.value() + "\n", 0600);

    std::printf("registry    %s\n", registry_runner.base_url().c_str());
    std::printf("issuer      %s   (tenants:", issuer_runner.base_url().c_str());
    for (const auto &iss : configs["issuers"]) std::printf(" %s", iss["name"].get<std::string>().c_str());
    std::printf(")\n");
    std::printf("broker      %s\n", broker_runner.base_url().c_str());
    std::printf("credstore   %s\n", credstore_runner.base_url().c_str());
    std::printf("publication %s\n", publish_runner.base_url().c_str());
    std::printf("admin token %s/admin-token (24 h, scope compute.modify)\n", data_dir.c_str());
    std::printf("\nTry:  TOKEN_BROKER=%s gettoken -e dune -r production\n",
                broker_runner.base_url().c_str());
    std::printf("Consent pages run on the issuer; users: alice (dune), bob (gm2), dunepro.\n");
    std::fflush(stdout);

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(200));

    publish_runner.stop();
    credstore_runner.stop();
    broker_runner.stop();
    issuer_runner.stop();
    registry_runner.stop();
    return 0;
}

// robotmgr: onboard unattended robot identities through one interactive
// bootstrap, then keep their broker tokens renewed, stored at every
// credstore, and pushed to every destination node.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include "CLI11.hpp"

#include "gridauth/clock.hpp"
#include "gridauth/fsutil.hpp"
#include "gridauth/robot_manager.hpp"

using namespace gridauth;
using nlohmann::json;

namespace {

std::atomic<bool> stop_requested{false};

void handle_signal(int) { stop_requested = true; }

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Managed robot credentials: onboard once, renew forever"};
    app.require_subcommand(1);

    RobotManager::Options opts;
    opts.state_dir = "robotmgr-state";
    std::string push_root;

    app.add_option("--state", opts.state_dir, "State directory (records, keys, tokens)");
    app.add_option("--broker", opts.broker_url, "Broker base URL (default: $TOKEN_BROKER)");
    app.add_option("--threshold", opts.renewal_threshold,
                   "Renew when remaining broker-token lifetime drops below this (seconds)");
    app.add_option("--push-root", push_root,
                   "Root directory the push transport writes under (default: <state>/nodes)");

    auto *onboard = app.add_subcommand("onboard", "Enroll a robot from a config file");
    std::string config_file, admin_token, admin_token_file;
    onboard->add_option("--config", config_file, "Robot config JSON")->required();
    onboard->add_option("--admin-token", admin_token, "Admin bearer token");
    onboard->add_option("--admin-token-file", admin_token_file, "File holding the admin token");

    auto *run = app.add_subcommand("run", "Run renewal cycles");
    bool once = false;
    int64_t interval = 21600;
    run->add_flag("--once", once, "One cycle, then exit");
    run->add_option("--interval", interval, "Seconds between cycles");

    app.add_subcommand("status", "Show every robot and its token freshness");

    CLI11_PARSE(app, argc, argv);

    if (opts.broker_url.empty()) {
        if (const char *v = std::getenv("TOKEN_BROKER")) opts.broker_url = v;
    }
    if (push_root.empty()) push_root = opts.state_dir + "/nodes";
    if (opts.log_path.empty()) opts.log_path = opts.state_dir + "/robotmgr.log";

    auto clock = std::make_shared<SystemClock>();
    auto transport = std::make_shared<LocalDirTransport>(push_root);
    RobotManager mgr(opts, clock, transport);
    if (auto s = mgr.load(); !s.ok()) {
        std::fprintf(stderr, "robotmgr: %s: %s\n", s.error().code.c_str(),
                     s.error().message.c_str());
        return 1;
    }

    if (app.got_subcommand("onboard")) {
        if (admin_token.empty() && !admin_token_file.empty()) {
            auto text = read_file(admin_token_file);
            if (!text) {
                std::fprintf(stderr, "robotmgr: cannot read %s\n", admin_token_file.c_str());
                return 1;
            }
            admin_token = *text;
            while (!admin_token.empty() && std::isspace((unsigned char)admin_token.back()))
                admin_token.pop_back();
        }
        if (admin_token.empty()) {
            std::fprintf(stderr, "robotmgr: --admin-token or --admin-token-file is required\n");
            return 1;
        }
        auto text = read_file(config_file);
        if (!text) {
            std::fprintf(stderr, "robotmgr: cannot read %s\n", config_file.c_str());
            return 1;
        }
        json cfg = json::parse(*text, nullptr, false);
        if (cfg.is_discarded()) {
            std::fprintf(stderr, "robotmgr: %s is not valid JSON\n", config_file.c_str());
            return 1;
        }
        auto rec = mgr.onboard(cfg, admin_token, [](const std::string &url) {
            std::fprintf(stderr,
                         "Open this URL in a browser, approve access for the robot,\n"
                         "then press Enter to continue:\n\n  %s\n\n",
                         url.c_str());
            std::string line;
            std::getline(std::cin, line);
        });
        if (!rec.ok()) {
            std::fprintf(stderr, "robotmgr: %s: %s\n", rec.error().code.c_str(),
                         rec.error().message.c_str());
            return rec.error().code == "auth_required" ? 2 : 1;
        }
        std::printf("%s\n", rec.value().to_json().dump(2).c_str());
        return 0;
    }

    if (app.got_subcommand("run")) {
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        do {
            json report = mgr.run_cycle();
            std::printf("%s\n", report.dump(2).c_str());
            std::fflush(stdout);
            if (once) break;
            for (int64_t waited = 0; waited < interval && !stop_requested; waited++)
                std::this_thread::sleep_for(std::chrono::seconds(1));
        } while (!stop_requested);
        return 0;
    }

    std::printf("%s\n", mgr.status().dump(2).c_str());
    return 0;
}

#include "gridauth/registry_service.hpp"

#include <fstream>
#include <sstream>

#include "httplib.h"

#include "gridauth/fsutil.hpp"

namespace gridauth {

namespace {

// "Bearer xyz" -> "xyz"; empty when the scheme is missing.
std::string bearer_of(const std::string &header) {
    const std::string scheme = "Bearer ";
    if (header.rfind(scheme, 0) != 0) return "";
    return header.substr(scheme.size());
}

} // namespace

RegistryService::RegistryService(Options opts, ClockPtr clock)
    : opts_(std::move(opts)), clock_(std::move(clock)), log_(opts_.log_path),
      state_(std::make_shared<RegistryState>()) {}

std::string RegistryService::journal_path() const { return opts_.data_dir + "/journal.ndjson"; }
std::string RegistryService::snapshot_path() const { return opts_.data_dir + "/snapshot.json"; }

Status RegistryService::load() {
    std::lock_guard lock(mu_);
    auto dir = ensure_dir(opts_.data_dir);
    if (!dir.ok()) return dir;

    RegistryState state;
    if (auto snap = read_file(snapshot_path())) {
        auto parsed = nlohmann::json::parse(*snap, nullptr, false);
        if (parsed.is_discarded()) return Error{"corrupt_snapshot", snapshot_path()};
        auto s = RegistryState::from_json(parsed);
        if (!s.ok()) return s.error();
        state = s.value();
    }

    if (auto journal = read_file(journal_path())) {
        std::istringstream lines(*journal);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            auto entry = nlohmann::json::parse(line, nullptr, false);
            if (entry.is_discarded()) return Error{"corrupt_journal", line};
            int64_t serial = entry.value("serial", int64_t{0});
            if (serial <= state.serial) continue; // already in the snapshot
            auto change = Change::from_json(entry.value("change", nlohmann::json::object()));
            if (!change.ok()) return change.error();
            auto next = apply_change(state, change.value());
            if (!next.ok()) return next.error();
            if (next.value().serial != serial) {
                return Error{"corrupt_journal", "serial gap at " + std::to_string(serial)};
            }
            state = next.value();
        }
    }

    state_ = std::make_shared<const RegistryState>(std::move(state));
    return ok_status();
}

Expected<int64_t> RegistryService::submit(const Change &change) {
    std::lock_guard lock(mu_);
    auto next = apply_change(*state_, change);
    if (!next.ok()) return next.error();

    nlohmann::json entry{{"serial", next.value().serial}, {"change", change.to_json()}};
    {
        std::ofstream out(journal_path(), std::ios::app);
        if (!out) return Error{"io_error", "cannot append to " + journal_path()};
        out << entry.dump() << "\n";
        if (!out.flush()) return Error{"io_error", "journal flush failed"};
    }

    auto committed = std::make_shared<const RegistryState>(std::move(next).value());
    state_ = committed;
    log_.write("serial=" + std::to_string(committed->serial) + " kind=" + change.kind);
    return committed->serial;
}

Status RegistryService::compact() {
    std::lock_guard lock(mu_);
    auto w = write_file_atomic(snapshot_path(), state_->to_json().dump(2));
    if (!w.ok()) return w;
    return write_file_atomic(journal_path(), "");
}

std::shared_ptr<const RegistryState> RegistryService::state() const {
    std::lock_guard lock(mu_);
    return state_;
}

void RegistryService::attach(httplib::Server &srv) {
    srv.Post("/change", [this](const httplib::Request &req, httplib::Response &res) {
        auto decision = authorize_api(bearer_of(req.get_header_value("Authorization")),
                                      opts_.admin_scope, opts_.trust, clock_->now());
        if (!decision.allow) {
            log_.write("deny change: " + decision.reason);
            send_error(res, 401, "access_denied", decision.reason);
            return;
        }
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded()) {
            send_error(res, 400, "invalid_request", "body is not JSON");
            return;
        }
        auto change = Change::from_json(body);
        if (!change.ok()) {
            send_error(res, 400, change.error().code, change.error().message);
            return;
        }
        auto serial = submit(change.value());
        if (!serial.ok()) {
            send_error(res, 409, serial.error().code, serial.error().message);
            return;
        }
        send_json(res, 200, {{"serial", serial.value()}, {"applied_by", decision.claims.sub}});
    });

    srv.Get("/directory", [this](const httplib::Request &, httplib::Response &res) {
        send_json(res, 200, export_directory(*state()));
    });

    srv.Get("/configs", [this](const httplib::Request &, httplib::Response &res) {
        send_json(res, 200, generate_configs(*state(), opts_.issuer_base_url));
    });

    srv.Get("/serial", [this](const httplib::Request &, httplib::Response &res) {
        send_json(res, 200, {{"serial", state()->serial}});
    });
}

} // namespace gridauth

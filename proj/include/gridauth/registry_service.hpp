#pragma once

#include <memory>
#include <mutex>
#include <string>

#include "gridauth/clock.hpp"
#include "gridauth/http_util.hpp"
#include "gridauth/registry.hpp"

namespace httplib {
class Server;
}

namespace gridauth {

// Registry as a service: an append-only change journal plus snapshot under
// data_dir, and an HTTP+JSON API. Single writer; readers work on immutable
// state snapshots.
class RegistryService {
  public:
    struct Options {
        std::string data_dir;
        ApiTrust trust;
        Scope admin_scope;          // scope required on POST /change
        std::string issuer_base_url; // used by GET /configs
        std::string log_path;        // optional line log
    };

    RegistryService(Options opts, ClockPtr clock);

    // Replays snapshot + journal from data_dir (fresh state if absent).
    Status load();

    // Applies and journals one change; returns the new serial.
    Expected<int64_t> submit(const Change &change);

    // Writes a snapshot and truncates the journal.
    Status compact();

    std::shared_ptr<const RegistryState> state() const;

    // Registers POST /change, GET /directory, GET /configs, GET /serial.
    void attach(httplib::Server &srv);

  private:
    std::string journal_path() const;
    std::string snapshot_path() const;

    Options opts_;
    ClockPtr clock_;
    LineLog log_;
    mutable std::mutex mu_;
    std::shared_ptr<const RegistryState> state_;
};

} // namespace gridauth

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "json.hpp"

#include "gridauth/expected.hpp"

namespace httplib {
class Server;
class Response;
} // namespace httplib

namespace gridauth {

// Owns an httplib::Server on a background thread. Binds 127.0.0.1 on an
// ephemeral port unless one is given.
class HttpServerRunner {
  public:
    HttpServerRunner();
    ~HttpServerRunner();
    HttpServerRunner(const HttpServerRunner &) = delete;
    HttpServerRunner &operator=(const HttpServerRunner &) = delete;

    httplib::Server &server();

    // Two-phase startup so routes can be registered after the port (and
    // therefore the service's public URL) is known: bind, attach, serve.
    int bind(int port = 0);
    int serve();

    // bind + serve in one go. Returns the bound port, or -1 on failure.
    int start(int port = 0);
    void stop();
    bool running() const { return running_; }

    int port() const { return port_; }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  private:
    std::unique_ptr<httplib::Server> server_;
    std::unique_ptr<std::thread> thread_;
    int port_ = -1;
    bool running_ = false;
};

// "http://host:port/some/path" -> {"http://host:port", "/some/path"}.
struct SplitUrl {
    std::string origin;
    std::string path;
};
SplitUrl split_url(const std::string &url);

void send_json(httplib::Response &res, int status, const nlohmann::json &body);
void send_error(httplib::Response &res, int status, const std::string &code,
                const std::string &message);

// JSON-in/JSON-out client calls against a service base URL. Transport
// failures come back as code "network"; a non-200 response becomes an Error
// carrying the service's own {error, error_description} body. A non-empty
// bearer goes out as an Authorization header.
Expected<nlohmann::json> http_post_json(const std::string &base_url, const std::string &path,
                                        const nlohmann::json &body,
                                        const std::string &bearer = "");
Expected<nlohmann::json> http_get_json(const std::string &base_url, const std::string &path);

// Append-only line logger; services use it for their structured logs so tests
// can scan everything that was ever written.
class LineLog {
  public:
    LineLog() = default;
    explicit LineLog(std::string path) : path_(std::move(path)) {}
    void write(const std::string &line) const;

  private:
    std::string path_; // empty: drop
};

} // namespace gridauth

#include "gridauth/http_util.hpp"

#include <fstream>
#include <mutex>

#include "httplib.h"

namespace gridauth {

HttpServerRunner::HttpServerRunner() : server_(std::make_unique<httplib::Server>()) {}

HttpServerRunner::~HttpServerRunner() { stop(); }

httplib::Server &HttpServerRunner::server() { return *server_; }

int HttpServerRunner::bind(int port) {
    if (port_ > 0) return port_;
    if (port == 0) {
        port_ = server_->bind_to_any_port("127.0.0.1");
        if (port_ <= 0) return -1;
    } else {
        if (!server_->bind_to_port("127.0.0.1", port)) return -1;
        port_ = port;
    }
    return port_;
}

int HttpServerRunner::serve() {
    if (running_) return port_;
    if (port_ <= 0) return -1;
    thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    running_ = true;
    return port_;
}

int HttpServerRunner::start(int port) {
    if (running_) return port_;
    if (bind(port) <= 0) return -1;
    return serve();
}

void HttpServerRunner::stop() {
    if (!running_) return;
    server_->stop();
    if (thread_ && thread_->joinable()) thread_->join();
    thread_.reset();
    running_ = false;
    port_ = -1; // a later start() must re-bind
}

SplitUrl split_url(const std::string &url) {
    auto scheme_end = url.find("://");
    size_t path_start;
    if (scheme_end == std::string::npos) {
        path_start = url.find('/');
    } else {
        path_start = url.find('/', scheme_end + 3);
    }
    if (path_start == std::string::npos) return {url, ""};
    return {url.substr(0, path_start), url.substr(path_start)};
}

void send_json(httplib::Response &res, int status, const nlohmann::json &body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response &res, int status, const std::string &code,
                const std::string &message) {
    send_json(res, status, {{"error", code}, {"error_description", message}});
}

void LineLog::write(const std::string &line) const {
    if (path_.empty()) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::ofstream out(path_, std::ios::app);
    out << line << "\n";
}

namespace {

Expected<nlohmann::json> as_service_result(const std::string &base_url,
                                           const httplib::Result &res) {
    if (!res) return Error{"network", "no response from " + base_url};
    nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
    if (doc.is_discarded())
        return Error{"network", "unparseable response from " + base_url};
    if (res->status != 200)
        return Error{doc.value("error", std::string("service_error")),
                     doc.value("error_description", std::string("request refused"))};
    return doc;
}

} // namespace

Expected<nlohmann::json> http_post_json(const std::string &base_url, const std::string &path,
                                        const nlohmann::json &body, const std::string &bearer) {
    SplitUrl u = split_url(base_url);
    httplib::Client cli(u.origin);
    cli.set_connection_timeout(2, 0);
    cli.set_read_timeout(10, 0);
    httplib::Headers headers;
    if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);
    return as_service_result(
        base_url, cli.Post(u.path + path, headers, body.dump(), "application/json"));
}

Expected<nlohmann::json> http_get_json(const std::string &base_url, const std::string &path) {
    SplitUrl u = split_url(base_url);
    httplib::Client cli(u.origin);
    cli.set_connection_timeout(2, 0);
    cli.set_read_timeout(10, 0);
    return as_service_result(base_url, cli.Get(u.path + path));
}

} // namespace gridauth

#include "gridauth/scope.hpp"

#include <array>
#include <sstream>

namespace gridauth {

namespace {

struct AuthzName {
    Authz authz;
    const char *name;
};

constexpr std::array<AuthzName, 7> kVocabulary = {{
    {Authz::compute_create, "compute.create"},
    {Authz::compute_read, "compute.read"},
    {Authz::compute_modify, "compute.modify"},
    {Authz::compute_cancel, "compute.cancel"},
    {Authz::storage_read, "storage.read"},
    {Authz::storage_create, "storage.create"},
    {Authz::storage_modify, "storage.modify"},
}};

} // namespace

const char *to_string(Authz a) {
    for (const auto &e : kVocabulary) {
        if (e.authz == a) return e.name;
    }
    return "?";
}

bool is_storage(Authz a) {
    return a == Authz::storage_read || a == Authz::storage_create || a == Authz::storage_modify;
}

std::string Scope::str() const {
    std::string s = to_string(authz);
    if (has_path()) {
        s += ':';
        s += path;
    }
    return s;
}

bool valid_scope_path(std::string_view path) {
    if (path.empty() || path[0] != '/') return false;
    if (path == "/") return true;
    // Each segment between '/' separators must be non-empty and not "." or "..".
    size_t pos = 1;
    while (pos <= path.size()) {
        size_t next = path.find('/', pos);
        std::string_view seg =
            path.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
        if (seg.empty() || seg == "." || seg == "..") return false;
        if (next == std::string_view::npos) break;
        pos = next + 1;
        if (pos > path.size()) return false; // trailing '/'
    }
    return path.back() != '/';
}

Expected<Scope> parse_scope(std::string_view text) {
    if (text.empty()) return Error{"empty_scope", "empty scope string"};
    auto colon = text.find(':');
    std::string_view name = text.substr(0, colon);
    for (const auto &e : kVocabulary) {
        if (name == e.name) {
            if (colon == std::string_view::npos) {
                return Scope{e.authz, ""};
            }
            std::string_view path = text.substr(colon + 1);
            if (!is_storage(e.authz)) {
                return Error{"malformed_path",
                             std::string(name) + " scopes never carry a path: " + std::string(text)};
            }
            if (!valid_scope_path(path)) {
                return Error{"malformed_path", "bad scope path: " + std::string(path)};
            }
            return Scope{e.authz, std::string(path)};
        }
    }
    return Error{"unknown_authz", "unknown authorization name: " + std::string(name)};
}

bool subsumes(const Scope &granted, const Scope &requested) {
    if (granted.authz != requested.authz) return false;
    if (!granted.has_path() && !requested.has_path()) return true;
    if (!granted.has_path() || !requested.has_path()) return false;
    if (granted.path == "/") return true;
    if (requested.path.size() < granted.path.size()) return false;
    if (requested.path.compare(0, granted.path.size(), granted.path) != 0) return false;
    // Prefix must end on a segment boundary: "/a" covers "/a/b", not "/ab".
    return requested.path.size() == granted.path.size() ||
           requested.path[granted.path.size()] == '/';
}

bool subsumes_any(const std::vector<Scope> &granted, const Scope &requested) {
    for (const auto &g : granted) {
        if (subsumes(g, requested)) return true;
    }
    return false;
}

Expected<std::vector<Scope>> downscope(const std::vector<Scope> &granted,
                                       const std::vector<Scope> &requested) {
    if (requested.empty()) return granted;
    for (const auto &r : requested) {
        if (!subsumes_any(granted, r)) {
            return Error{"downscope_refused", "requested scope not covered by grant: " + r.str()};
        }
    }
    return requested;
}

std::string scope_claim(const std::vector<Scope> &scopes) {
    std::string out;
    for (const auto &s : scopes) {
        if (!out.empty()) out += ' ';
        out += s.str();
    }
    return out;
}

namespace {

Expected<std::vector<Scope>> parse_separated(std::string_view text, std::string_view seps) {
    std::vector<Scope> out;
    size_t pos = 0;
    while (pos < text.size()) {
        while (pos < text.size() && seps.find(text[pos]) != std::string_view::npos) pos++;
        if (pos >= text.size()) break;
        size_t end = text.find_first_of(seps, pos);
        std::string_view tok = text.substr(pos, end == std::string_view::npos ? std::string_view::npos
                                                                              : end - pos);
        auto s = parse_scope(tok);
        if (!s.ok()) return s.error();
        out.push_back(s.value());
        if (end == std::string_view::npos) break;
        pos = end + 1;
    }
    return out;
}

} // namespace

Expected<std::vector<Scope>> parse_scope_claim(std::string_view claim) {
    return parse_separated(claim, " ");
}

Expected<std::vector<Scope>> parse_scope_list(std::string_view text) {
    return parse_separated(text, ", ");
}

} // namespace gridauth

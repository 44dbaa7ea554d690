#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "gridauth/expected.hpp"

namespace gridauth {

// The fixed authorization vocabulary. Unknown names are a parse error, not
// passed through: downscoping is only sound over names we understand.
enum class Authz {
    compute_create,
    compute_read,
    compute_modify,
    compute_cancel,
    storage_read,
    storage_create,
    storage_modify,
};

const char *to_string(Authz a);
bool is_storage(Authz a);

// One authorization, optionally path-qualified. Only storage.* scopes may
// carry a path; a path is absolute with no empty, "." or ".." segments.
// "/" is the root prefix.
struct Scope {
    Authz authz;
    std::string path; // empty means no path

    bool has_path() const { return !path.empty(); }
    std::string str() const;

    friend bool operator==(const Scope &, const Scope &) = default;
    friend auto operator<=>(const Scope &, const Scope &) = default;
};

// Parses "name[:path]", splitting on the first ':'.
// Error codes: empty_scope, unknown_authz, malformed_path.
Expected<Scope> parse_scope(std::string_view text);

// Path validity on its own (used by config loaders).
bool valid_scope_path(std::string_view path);

// True iff granted covers requested: equal authz and either both pathless or
// granted.path a segment-wise prefix of requested.path. "/a" covers "/a/b"
// but not "/ab".
bool subsumes(const Scope &granted, const Scope &requested);

bool subsumes_any(const std::vector<Scope> &granted, const Scope &requested);

// Returns requested iff every member is covered by some granted scope; an
// empty request means no reduction and returns granted unchanged.
// Error code: downscope_refused (message names the offending scope).
Expected<std::vector<Scope>> downscope(const std::vector<Scope> &granted,
                                       const std::vector<Scope> &requested);

// Space-separated scope claim value, preserving order.
std::string scope_claim(const std::vector<Scope> &scopes);
Expected<std::vector<Scope>> parse_scope_claim(std::string_view claim);

// Comma- or space-separated list as seen on command lines and config files.
Expected<std::vector<Scope>> parse_scope_list(std::string_view text);

} // namespace gridauth

#pragma once

#include <cstdint>

#include "gridauth/expected.hpp"

namespace gridauth {

// Single table of credential lifetimes. Every component reads its constants
// from here; a configuration that breaks the refresh > broker > access
// ordering is rejected wherever a Lifetimes value is accepted.
struct Lifetimes {
    int64_t access_token = 10'800;     // 3 hours
    int64_t broker_token = 604'800;    // 7 days
    int64_t refresh_token = 2'419'200; // 4 weeks
    int64_t auth_code = 600;
    int64_t bootstrap_session = 900;
    int64_t clock_skew = 60;
    int64_t assertion_window = 300; // secondary-assertion timestamp tolerance

    Status validate() const {
        if (access_token <= 0 || auth_code <= 0 || bootstrap_session <= 0 || clock_skew < 0 ||
            assertion_window <= 0) {
            return Error{"invalid_lifetimes", "lifetimes must be positive"};
        }
        if (!(refresh_token > broker_token && broker_token > access_token)) {
            return Error{"invalid_lifetimes", "lifetime ordering violated: need refresh > broker > access"};
        }
        return ok_status();
    }
};

} // namespace gridauth

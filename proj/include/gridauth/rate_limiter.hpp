#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>

namespace gridauth {

// Fixed one-minute windows keyed on floor(now / 60), one counter per
// principal. Within any simulated minute at most `limit` calls pass; the
// first rejected call learns how long until the window rolls over.
class RateLimiter {
  public:
    explicit RateLimiter(int limit_per_minute = 60) : limit_(limit_per_minute) {}

    struct Decision {
        bool allowed = false;
        int64_t retry_after = 0; // seconds until the next window, when denied
    };

    Decision check(const std::string &principal, int64_t now) {
        std::lock_guard lock(mu_);
        int64_t window = now / 60;
        auto &slot = counts_[principal];
        if (slot.window != window) {
            slot.window = window;
            slot.count = 0;
        }
        if (slot.count >= limit_) {
            return {false, 60 - (now % 60)};
        }
        slot.count++;
        return {true, 0};
    }

    void set_limit(int limit_per_minute) {
        std::lock_guard lock(mu_);
        limit_ = limit_per_minute;
    }

    int limit() const {
        std::lock_guard lock(mu_);
        return limit_;
    }

  private:
    struct Slot {
        int64_t window = -1;
        int count = 0;
    };
    mutable std::mutex mu_;
    int limit_;
    std::map<std::string, Slot> counts_;
};

} // namespace gridauth

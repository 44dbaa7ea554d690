#pragma once

#include <atomic>
#include <cstdint>
#include <ctime>
#include <memory>

namespace gridauth {

// Seconds since the Unix epoch. Every lifetime and expiry in the project is
// computed against a Clock so tests can drive time explicitly.
class Clock {
  public:
    virtual ~Clock() = default;
    virtual int64_t now() const = 0;
};

class SystemClock final : public Clock {
  public:
    int64_t now() const override { return static_cast<int64_t>(::time(nullptr)); }
};

// Manually driven clock for tests and simulations.
class SimClock final : public Clock {
  public:
    explicit SimClock(int64_t start = 1'700'000'000) : t_(start) {}
    int64_t now() const override { return t_.load(); }
    void set(int64_t t) { t_.store(t); }
    void advance(int64_t dt) { t_.fetch_add(dt); }

  private:
    std::atomic<int64_t> t_;
};

using ClockPtr = std::shared_ptr<Clock>;

inline ClockPtr system_clock() { return std::make_shared<SystemClock>(); }

} // namespace gridauth

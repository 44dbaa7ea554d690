#pragma once

#include <cassert>
#include <string>
#include <utility>
#include <variant>

namespace gridauth {

// Error with a machine-readable code and a human-readable message.
// The code vocabulary is defined per operation.
struct Error {
    std::string code;
    std::string message;
};

// Minimal result type: either a value or an error.
template <typename T, typename E = Error>
class Expected {
  public:
    Expected(T value) : v_(std::in_place_index<0>, std::move(value)) {}
    Expected(E error) : v_(std::in_place_index<1>, std::move(error)) {}

    bool ok() const { return v_.index() == 0; }
    explicit operator bool() const { return ok(); }

    T &value() {
        assert(ok());
        return std::get<0>(v_);
    }
    const T &value() const {
        assert(ok());
        return std::get<0>(v_);
    }
    E &error() {
        assert(!ok());
        return std::get<1>(v_);
    }
    const E &error() const {
        assert(!ok());
        return std::get<1>(v_);
    }

  private:
    std::variant<T, E> v_;
};

// For operations whose success carries no payload.
using Status = Expected<std::monostate, Error>;

inline Status ok_status() { return Status(std::monostate{}); }

} // namespace gridauth

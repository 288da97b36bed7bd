#pragma once

#include <stdexcept>
#include <string>

namespace gnflow {

/// Input violates a documented precondition (bad parameter, malformed data).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Time integration could not proceed (step-size underflow, non-finite state).
class IntegrationFailure : public std::runtime_error {
public:
    IntegrationFailure(const std::string& what, double time)
        : std::runtime_error(what), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

} // namespace gnflow

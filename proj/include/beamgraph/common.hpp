#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace beamgraph {

// User-facing precondition violations (bad arguments, malformed files).
[[noreturn]] inline void fail_arg(const std::string& msg) {
    throw std::invalid_argument(msg);
}

// Internal numeric / state failures (non-convergence, broken invariants).
[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail_arg(msg);
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

}  // namespace beamgraph

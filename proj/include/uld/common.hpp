#pragma once

#include <cstdint>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace uld {

/// Bad configuration (ranges, keys, enum values). CLI maps this to exit 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

/// Invalid runtime input (shape mismatch, empty dataset, malformed file rows).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& m) : std::runtime_error(m) {}
};

/// Filesystem failure; message carries the path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

namespace log {

inline void warn(const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; }
inline void info(const std::string& msg) { std::cerr << "[info] " << msg << "\n"; }

}  // namespace log

template <class... Args>
std::string strcat_(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

}  // namespace uld

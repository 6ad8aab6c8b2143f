#ifndef LBFTI_ERRORS_HPP_
#define LBFTI_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace lbfti {

// Error taxonomy used across the library. Everything derives from Error so
// callers can catch one type; the CLI maps Error -> exit code 1 and
// ConfigError/UsageError -> exit code 2.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

struct RangeError : Error {
    explicit RangeError(const std::string& msg) : Error("range error: " + msg) {}
};

struct ArityError : Error {
    explicit ArityError(const std::string& msg) : Error("arity error: " + msg) {}
};

struct StateError : Error {
    explicit StateError(const std::string& msg) : Error("state error: " + msg) {}
};

struct CapabilityError : Error {
    explicit CapabilityError(const std::string& msg) : Error("capability error: " + msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

}  // namespace lbfti

#endif  // LBFTI_ERRORS_HPP_

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace a4dg {

// Exit codes shared by the CLI. Every exception type maps onto one of them.
enum class ExitCode : int {
    kSuccess = 0,
    kConfig = 2,
    kData = 3,
    kNumerical = 4,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code = ExitCode::kData)
        : std::runtime_error(what), code_(code) {}

    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

// Non-finite or out-of-domain numeric argument.
class InvalidParameter : public Error {
public:
    explicit InvalidParameter(const std::string& what)
        : Error("invalid parameter: " + what, ExitCode::kConfig) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what)
        : Error("config error: " + what, ExitCode::kConfig) {}
};

// Malformed input file. `offset` is the byte position where parsing failed
// (or npos when not applicable).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset = std::string::npos)
        : Error(offset == std::string::npos
                    ? "parse error: " + what
                    : "parse error at byte " + std::to_string(offset) + ": " + what,
                ExitCode::kData),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class NumericalAbort : public Error {
public:
    explicit NumericalAbort(const std::string& what)
        : Error("numerical abort: " + what, ExitCode::kNumerical) {}
};

// Cached MLP outputs no longer match the parameters they were built from.
class StaleCache : public Error {
public:
    explicit StaleCache(const std::string& what)
        : Error("stale inference cache: " + what, ExitCode::kData) {}
};

}  // namespace a4dg

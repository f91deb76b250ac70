#pragma once

#include <stdexcept>
#include <string>

namespace rawnet {

// Error taxonomy shared across the library. Each maps to one failure class:
// shape/dimension disagreements, invalid numeric domains, malformed files,
// unsupported-but-wellformed files, bad configuration, violated call
// contracts, and unparseable text inputs.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct UnsupportedFormatError : std::runtime_error {
    explicit UnsupportedFormatError(const std::string& msg)
        : std::runtime_error("unsupported format: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

} // namespace rawnet

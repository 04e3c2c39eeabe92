#pragma once

#include <stdexcept>
#include <string>

namespace purge {

enum class ErrorKind {
    invalid_argument,
    config,
    parse,
    dimension,
    partition,
    not_found,
    io,
    verification_unavailable,
};

/// Base of every error raised by the library. `kind()` lets the CLI map
/// failures onto exit codes without a cascade of catch blocks.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define PURGE_DEFINE_ERROR(Name, Kind)                                                  \
    class Name : public Error {                                                         \
    public:                                                                             \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}        \
    };

PURGE_DEFINE_ERROR(InvalidArgument, invalid_argument)
PURGE_DEFINE_ERROR(ConfigError, config)
PURGE_DEFINE_ERROR(ParseError, parse)
PURGE_DEFINE_ERROR(DimensionError, dimension)
PURGE_DEFINE_ERROR(PartitionError, partition)
PURGE_DEFINE_ERROR(NotFoundError, not_found)
PURGE_DEFINE_ERROR(IoError, io)
PURGE_DEFINE_ERROR(VerificationUnavailable, verification_unavailable)

#undef PURGE_DEFINE_ERROR

}  // namespace purge

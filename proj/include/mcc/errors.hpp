#pragma once

#include <stdexcept>
#include <string>

namespace mcc {

// Error taxonomy used across the library. Shape/domain/contract map to the
// precondition kinds in the public op contracts; Io/Config surface file and
// configuration failures with the offending path or key in the message.

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mcc

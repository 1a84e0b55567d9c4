#pragma once

#include <stdexcept>
#include <string>

namespace dap {

// Base class for every error raised by the library. Subclasses map onto the
// CLI exit codes (see tools/dapctl.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// A sensitive domain (or row subset) that must be populated is empty.
class EmptyDomainError : public Error {
public:
    EmptyDomainError(const std::string& what, int domain = -1)
        : Error(what), domain_(domain) {}
    int domain() const noexcept { return domain_; }

private:
    int domain_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class DivergedError : public Error {
public:
    DivergedError(const std::string& what, int epoch, int batch)
        : Error(what), epoch_(epoch), batch_(batch) {}
    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }

private:
    int epoch_;
    int batch_;
};

class DegenerateTargetError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace dap

#pragma once

#include <stdexcept>
#include <string>

namespace totr {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape mismatch or invalid mode/partition argument.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A matrix that must be invertible or positive definite is not.
class SingularError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace totr

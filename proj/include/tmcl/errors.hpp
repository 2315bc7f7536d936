#pragma once

#include <stdexcept>
#include <string>

namespace tmcl {

/// Shapes or settings that cannot work together.
class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numeric argument outside the domain of the function (e.g. non-positive variance).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace tmcl

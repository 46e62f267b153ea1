#pragma once

#include <stdexcept>
#include <string>

namespace mmst {

// Error taxonomy. The CLI maps these onto process exit codes:
// UsageError/ConfigError -> 1, DataError -> 2, NumericalError -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

}  // namespace mmst

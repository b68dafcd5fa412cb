#pragma once

#include <stdexcept>
#include <string>

namespace tinyde {

// Every failure raised by the library derives from Error so callers can
// catch one type; the subclasses map onto distinct CLI exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct DegenerateInputError : Error {
  using Error::Error;
};

struct StateError : Error {
  using Error::Error;
};

struct ValueError : Error {
  using Error::Error;
};

struct ModeError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

}  // namespace tinyde

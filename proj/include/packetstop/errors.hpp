#pragma once

#include <stdexcept>
#include <string>

namespace packetstop {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Image dimensions do not line up with the block geometry.
struct DimensionError : Error {
  using Error::Error;
};

// Caller broke a documented precondition (bad block id, missing payload...).
struct ContractViolation : Error {
  using Error::Error;
};

struct SchemaError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct SpecError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace packetstop

#pragma once

#include <stdexcept>
#include <string>

namespace vigcal {

// Error categories map onto the CLI exit codes (2, 3, 4).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vigcal

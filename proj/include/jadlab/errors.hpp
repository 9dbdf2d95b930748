#pragma once

#include <stdexcept>
#include <string>

namespace jadlab {

// Error taxonomy matching the CLI exit codes: config errors (2),
// simulation faults (3), filter faults (4).

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SimulationFault : std::runtime_error {
  explicit SimulationFault(const std::string& what) : std::runtime_error(what) {}
};

struct FilterFault : std::runtime_error {
  explicit FilterFault(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace jadlab

#pragma once

#include <stdexcept>
#include <string>

namespace fedlaw {

/// Mismatched vector/matrix layouts between operands.
struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A partition or selection that cannot satisfy its constraints
/// (more clients than samples, not enough samples per class, ...).
struct infeasible_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or unparsable experiment configuration. Maps to exit code 1.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or missing on-disk artifact (snapshot, schedule, CSV).
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedlaw

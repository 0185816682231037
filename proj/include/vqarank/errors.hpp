#pragma once

#include <stdexcept>
#include <string>

namespace vqarank {

// Dimension/precondition violations on in-memory values.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Invalid configuration or argument values.
struct ParamError : std::invalid_argument {
  explicit ParamError(const std::string& what) : std::invalid_argument(what) {}
};

// Inconsistent or malformed dataset content (manifests, banks, labels).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// File-level failures: missing paths, malformed binary payloads.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vqarank

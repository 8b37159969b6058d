#pragma once

#include <stdexcept>
#include <string>

namespace cdm {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// File/stream problems: missing images, unreadable manifests, short writes.
struct IoError : Error {
  using Error::Error;
};

// Mismatched image/tensor shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Bad user-supplied configuration or manifest contents.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values or degenerate denominators in numeric code.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace cdm

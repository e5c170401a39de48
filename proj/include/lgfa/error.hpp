#pragma once

#include <stdexcept>
#include <string>

namespace lgfa {

// Tensor shape disagreement at an op call site.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File decoding, parsing, or filesystem failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training aborted (e.g. divergence to non-finite loss).
class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metrics requested on data for which they are undefined.
class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lgfa

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cvf {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor rank or axis mismatch; messages name the offending axis.
class ShapeError : public Error {
  using Error::Error;
};
// Invalid static configuration (strides, sizes, ranges, taps).
class ConfigError : public Error {
  using Error::Error;
};
// Out-of-range gather/scatter index; message carries the offending value.
class IndexError : public Error {
  using Error::Error;
};
// Violated call contract (non-scalar loss, mismatched point counts).
class ContractError : public Error {
  using Error::Error;
};
// Malformed input file; message carries the line number where known.
class ParseError : public Error {
  using Error::Error;
};
// Missing or unusable input data.
class DataError : public Error {
  using Error::Error;
};
// Mathematical domain violation (zero-range point, non-positive box size).
class DomainError : public Error {
  using Error::Error;
};
// Checkpoint incompatible with the configured model.
class CheckpointError : public Error {
  using Error::Error;
};
// Metric undefined for the given inputs (e.g. zero ground truths).
class MetricError : public Error {
  using Error::Error;
};
// Non-finite loss during training.
class DivergenceError : public Error {
  using Error::Error;
};

}  // namespace cvf

//
// Copyright 2026 The dpssgd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef DPSSGD_ERRORS_HPP_
#define DPSSGD_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dpssgd {

// Base class for every error thrown by the library. The command line tool
// maps the subclasses to process exit codes (see tools/).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operands with incompatible shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A flat index outside the addressed tensor.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration: hyperparameters out of range, unchainable layer
// specs, malformed experiment configs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Semantically invalid data: labels out of range, count mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures: missing or truncated files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Structurally invalid file contents: bad magic numbers, wrong record sizes.
class FormatError : public Error {
 public:
  using Error::Error;
};

// An operation invoked in a state that does not support it.
class StateError : public Error {
 public:
  using Error::Error;
};

// The requested privacy budget is not reachable within the search bounds.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpssgd

#endif  // DPSSGD_ERRORS_HPP_

// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HFEDMOE_ERRORS_H_
#define HFEDMOE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace hfedmoe {

// Error taxonomy. Configuration-class errors map to CLI exit code 1,
// everything else to exit code 2.

// Tensor shapes do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad operand values (empty batch, label out of range, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation invoked in the wrong lifecycle state (e.g. backward without
// a recorded forward graph).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf encountered.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A routing restriction or expert selection cannot cover every layer.
class CoverageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A client whose resources cannot host even the base model.
class InfeasibleClientError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Malformed or inconsistent update package / checkpoint.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hfedmoe

#endif  // HFEDMOE_ERRORS_H_

// Copyright 2026 The rankshrink Authors
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

#ifndef RANKSHRINK_ERRORS_HPP
#define RANKSHRINK_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rankshrink {

// Caller passed something that violates a precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An iterative routine did not converge.
class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// Pruning removed every live token at some frame.
class DecodeFailure : public std::runtime_error {
 public:
  DecodeFailure(const std::string& what, int frame)
      : std::runtime_error(what), frame_(frame) {}
  int frame() const { return frame_; }

 private:
  int frame_;
};

// Short machine-readable tag for an exception, used by the CLI error record.
inline const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const InvalidInput*>(&e)) return "invalid_input";
  if (dynamic_cast<const NumericalFailure*>(&e)) return "numerical_failure";
  if (dynamic_cast<const DecodeFailure*>(&e)) return "decode_failure";
  return "runtime_error";
}

}  // namespace rankshrink

#endif  // RANKSHRINK_ERRORS_HPP

// Copyright 2026 The flsim Authors
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

#ifndef FLSIM_ERRORS_HPP_
#define FLSIM_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace flsim {

// Root of the library error hierarchy. Expected protocol outcomes (abandoned
// rounds, rejected reports, gate failures) are modelled as values, not
// exceptions; these types cover contract violations and hard failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class EmptyDatasetError : public Error {
 public:
  explicit EmptyDatasetError(const std::string& what) : Error(what) {}
};

class DimensionMismatchError : public Error {
 public:
  explicit DimensionMismatchError(const std::string& what) : Error(what) {}
};

class ZeroWeightError : public Error {
 public:
  explicit ZeroWeightError(const std::string& what) : Error(what) {}
};

class InvalidConfigError : public Error {
 public:
  explicit InvalidConfigError(const std::string& what) : Error(what) {}
};

class IncompatibleVersionError : public Error {
 public:
  explicit IncompatibleVersionError(const std::string& what) : Error(what) {}
};

class IllegalTransitionError : public Error {
 public:
  explicit IllegalTransitionError(const std::string& what) : Error(what) {}
};

class OverflowRiskError : public Error {
 public:
  explicit OverflowRiskError(const std::string& what) : Error(what) {}
};

class BelowThresholdError : public Error {
 public:
  explicit BelowThresholdError(const std::string& what) : Error(what) {}
};

class GroupTooSmallError : public Error {
 public:
  explicit GroupTooSmallError(const std::string& what) : Error(what) {}
};

class UnknownActorError : public Error {
 public:
  explicit UnknownActorError(const std::string& what) : Error(what) {}
};

class GateRejectedError : public Error {
 public:
  explicit GateRejectedError(const std::string& what) : Error(what) {}
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& what) : Error(what) {}
};

}  // namespace flsim

#endif  // FLSIM_ERRORS_HPP_

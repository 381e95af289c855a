// Copyright 2026 The Maple Authors
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

#pragma once

#include <stdexcept>
#include <string>

namespace maple {

// Root of the library's exception hierarchy. Everything thrown by maple
// derives from this so callers can catch one type at the boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or contract violation on a library call.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A raw value failed schema validation. Carries the offending attribute
// name so annotation failures can be reported per attribute.
class ValidationError : public Error {
 public:
  ValidationError(std::string attribute, const std::string& what)
      : Error(what), attribute_(std::move(attribute)) {}
  const std::string& attribute() const noexcept { return attribute_; }

 private:
  std::string attribute_;
};

// Model endpoint failure that survived the retry policy.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Malformed or internally inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Budget-infeasible configuration, detected before any spend occurs.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Graphical-model structure constraint violation (e.g. size cap).
class StructureError : public Error {
 public:
  using Error::Error;
};

// Stage-level orchestration failure (bad inputs, corrupt checkpoints).
class PipelineError : public Error {
 public:
  using Error::Error;
};

// Evaluation would be unrepresentative (e.g. too many annotation failures).
class EvalError : public Error {
 public:
  using Error::Error;
};

}  // namespace maple

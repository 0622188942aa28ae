// Copyright 2026 The ICL Subspace Lab Authors. All Rights Reserved.
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

#ifndef ICL_ERRORS_H_
#define ICL_ERRORS_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace icl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimensionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class RankTooLargeError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class SingularCovarianceError : public Error {
 public:
  using Error::Error;
};

class EmptyPromptError : public Error {
 public:
  using Error::Error;
};

class InvalidScaleError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of a formula.
class DomainError : public Error {
 public:
  using Error::Error;
};

class DivisionByZeroError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced by an iterative procedure or a divergent limit.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int64_t iteration)
      : Error(what), iteration_(iteration) {}
  int64_t iteration() const { return iteration_; }

 private:
  int64_t iteration_;
};

class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Schema violation in an experiment configuration; `field` is a JSON pointer.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& field, const std::string& message)
      : Error(field + ": " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace icl

#endif  // ICL_ERRORS_H_

// Copyright 2026 The fedaf Authors.
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

namespace fedaf {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or parameter shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument value was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite or runaway loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A fake label could not be formed (all teacher mass on the suppressed class).
class DegenerateLabelError : public Error {
 public:
  using Error::Error;
};

// IDX parsing failures. Each failure mode has its own type so callers can
// tell a corrupt header from a short file.
class IdxError : public Error {
 public:
  using Error::Error;
};
class IdxMagicError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncatedError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxCountMismatchError : public IdxError {
 public:
  using IdxError::IdxError;
};

// Experiment configuration problems; the message carries the key path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedaf

// Copyright 2026 The dmx Authors.
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

#ifndef DMX_ERROR_HPP
#define DMX_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dmx {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents or invalid axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Butterfly schedule whose divisibility requirements do not hold.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

/// Two DeBut factors whose inner extents disagree.
class IncomposableError : public Error {
 public:
  using Error::Error;
};

class AutogradError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace dmx

#endif  // DMX_ERROR_HPP

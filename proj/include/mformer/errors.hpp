// Copyright 2026 The mformer Authors. All Rights Reserved.
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

#pragma once

#include <stdexcept>
#include <string>

namespace mformer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain an operation accepts (stride 3, eps <= 0, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Batch norm evaluated before any running statistics were recorded.
class UninitializedStatsError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed or semantically invalid model description. Line and column are
/// 1-based; zero means "not tied to a location".
class SpecError : public Error {
 public:
  SpecError(std::string message, std::string field, int line = 0, int column = 0)
      : Error(format(message, field, line, column)),
        field_(std::move(field)),
        line_(line),
        column_(column) {}

  const std::string& field() const noexcept { return field_; }
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& message, const std::string& field, int line,
                            int column) {
    std::string out;
    if (line > 0) {
      out += "line " + std::to_string(line);
      if (column > 0) out += ", column " + std::to_string(column);
      out += ": ";
    }
    if (!field.empty()) out += "'" + field + "': ";
    return out + message;
  }

  std::string field_;
  int line_;
  int column_;
};

}  // namespace mformer

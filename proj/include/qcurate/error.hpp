// Copyright 2026 The qcurate Authors
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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qc {

// Bad input data: malformed records, degenerate statistics, contract
// violations on values. Maps to exit code 3 in the CLI.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem or network failure. Exit code 4.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary or envelope format violation, located by byte offset when known.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  explicit FormatError(const std::string& what) : DataError(what) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_ = 0;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace qc

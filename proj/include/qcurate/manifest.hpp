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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace qc {

/// Record of one CLI invocation, appended as a single JSON line.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::map<std::string, std::string> artifact_hashes;  // path -> sha256 hex
  int exit_code = 0;
  std::string error;
};

void to_json(nlohmann::json& j, const RunManifest& m);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

void append_manifest(const std::filesystem::path& path, const RunManifest& m);

}  // namespace qc

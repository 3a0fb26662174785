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

#include "qcurate/manifest.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <memory>

#include "qcurate/error.hpp"

namespace qc {

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = {{"command", m.command},
       {"argv", m.argv},
       {"config", m.config},
       {"inputs", m.inputs},
       {"outputs", m.outputs},
       {"seed", m.seed},
       {"started", m.started},
       {"finished", m.finished},
       {"artifact_hashes", m.artifact_hashes},
       {"exit_code", m.exit_code}};
  if (!m.error.empty()) j["error"] = m.error;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 init failed");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 15]);
  }
  return hex;
}

void append_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to manifest " + path.string());
  out << nlohmann::json(m).dump() << '\n';
  if (!out) throw IoError("manifest write failed for " + path.string());
}

}  // namespace qc

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

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

namespace qc {

/// One corpus record. Keys other than id/text/lang/token_count are kept in
/// `extra` so passthrough writes do not lose them.
struct Document {
  std::string id;
  std::string text;
  std::string lang;
  std::optional<std::uint64_t> token_count;
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const Document&) const = default;
};

struct ShardStats {
  std::uint64_t documents_read = 0;
  std::uint64_t documents_invalid = 0;
  std::uint64_t tokens_read = 0;

  ShardStats& operator+=(const ShardStats& o) {
    documents_read += o.documents_read;
    documents_invalid += o.documents_invalid;
    tokens_read += o.tokens_read;
    return *this;
  }
  friend ShardStats operator+(ShardStats a, const ShardStats& b) { return a += b; }
  bool operator==(const ShardStats&) const = default;
};

struct ParseError {
  std::uint64_t line = 0;  // 1-based
  std::string message;
};

using ParsedRecord = std::variant<Document, ParseError>;

/// Number of Unicode code points in a UTF-8 string.
std::size_t utf8_length(std::string_view s);

/// token_count when present, else ceil(code points / 4).
std::uint64_t estimate_tokens(const Document& doc);

/// Builds a Document from one decoded JSON object. Throws DataError.
Document document_from_json(const nlohmann::json& j);
nlohmann::json document_to_json(const Document& doc);

/// Serializes one record as a single JSON line (no trailing newline).
std::string serialize_document(const Document& doc);

/// Streaming reader over newline-delimited JSON records.
///
/// Only the current line is buffered. A line longer than `max_record_bytes`
/// is drained without being stored and reported as invalid. `documents_read`
/// counts every non-blank line; a malformed line or a repeated id counts in
/// `documents_invalid` and the reader moves on.
class ShardReader {
 public:
  static constexpr std::size_t kDefaultMaxRecordBytes = 64u << 20;

  explicit ShardReader(std::istream& in,
                       std::size_t max_record_bytes = kDefaultMaxRecordBytes);

  /// Next record, or nullopt at end of stream. Throws IoError if the stream
  /// goes bad mid-read.
  std::optional<ParsedRecord> next();

  const ShardStats& stats() const { return stats_; }
  std::size_t peak_buffer_bytes() const { return peak_buffer_; }

 private:
  // false at EOF; `overflow` set when the line exceeded the cap
  bool read_line(bool& overflow);

  std::istream& in_;
  std::size_t max_record_bytes_;
  std::string line_;
  std::uint64_t line_no_ = 0;
  std::size_t peak_buffer_ = 0;
  std::unordered_set<std::string> seen_ids_;
  ShardStats stats_;
};

struct ParsedShard {
  std::vector<Document> documents;
  std::vector<ParseError> errors;
  ShardStats stats;
};

/// Reads a whole shard into memory. Convenience wrapper over ShardReader.
ParsedShard parse_shard(std::istream& in);

}  // namespace qc

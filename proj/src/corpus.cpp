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

#include "qcurate/corpus.hpp"

#include <algorithm>

#include "qcurate/error.hpp"

namespace qc {

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::uint64_t estimate_tokens(const Document& doc) {
  if (doc.token_count) return *doc.token_count;
  return (utf8_length(doc.text) + 3) / 4;
}

namespace {

const std::string& require_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(std::string("missing key '") + key + "'");
  if (!it->is_string()) throw DataError(std::string("key '") + key + "' must be a string");
  return it->get_ref<const std::string&>();
}

}  // namespace

Document document_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  Document doc;
  doc.id = require_string(j, "id");
  if (doc.id.empty()) throw DataError("empty id");
  doc.text = require_string(j, "text");
  doc.lang = require_string(j, "lang");
  if (auto it = j.find("token_count"); it != j.end() && !it->is_null()) {
    if (it->is_number_unsigned()) {
      doc.token_count = it->get<std::uint64_t>();
    } else if (it->is_number_integer()) {
      if (it->get<std::int64_t>() < 0) throw DataError("token_count must be non-negative");
      doc.token_count = it->get<std::uint64_t>();
    } else {
      throw DataError("token_count must be an integer");
    }
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "id" && k != "text" && k != "lang" && k != "token_count") doc.extra[k] = it.value();
  }
  return doc;
}

nlohmann::json document_to_json(const Document& doc) {
  nlohmann::json j = doc.extra.is_object() ? doc.extra : nlohmann::json::object();
  j["id"] = doc.id;
  j["text"] = doc.text;
  j["lang"] = doc.lang;
  if (doc.token_count) j["token_count"] = *doc.token_count;
  return j;
}

std::string serialize_document(const Document& doc) { return document_to_json(doc).dump(); }

ShardReader::ShardReader(std::istream& in, std::size_t max_record_bytes)
    : in_(in), max_record_bytes_(max_record_bytes) {
  if (!in_.good() && !in_.eof()) throw IoError("unreadable input stream");
}

bool ShardReader::read_line(bool& overflow) {
  line_.clear();
  overflow = false;
  std::streambuf* buf = in_.rdbuf();
  if (buf == nullptr) throw IoError("stream has no buffer");
  bool any = false;
  for (;;) {
    const int c = buf->sbumpc();
    if (c == std::char_traits<char>::eof()) {
      in_.setstate(std::ios::eofbit);
      return any;
    }
    any = true;
    if (c == '\n') return true;
    if (overflow) continue;
    if (line_.size() >= max_record_bytes_) {
      overflow = true;
      line_.clear();
      continue;
    }
    line_.push_back(static_cast<char>(c));
    peak_buffer_ = std::max(peak_buffer_, line_.size());
  }
}

std::optional<ParsedRecord> ShardReader::next() {
  bool overflow = false;
  while (read_line(overflow)) {
    ++line_no_;
    if (!overflow) {
      if (!line_.empty() && line_.back() == '\r') line_.pop_back();
      if (line_.find_first_not_of(" \t") == std::string::npos) continue;
    }
    ++stats_.documents_read;
    auto fail = [&](std::string msg) -> ParsedRecord {
      ++stats_.documents_invalid;
      return ParseError{line_no_, std::move(msg)};
    };
    if (overflow) return fail("record exceeds " + std::to_string(max_record_bytes_) + " bytes");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line_);
    } catch (const nlohmann::json::exception& e) {
      return fail(e.what());
    }
    try {
      Document doc = document_from_json(j);
      if (!seen_ids_.insert(doc.id).second) return fail("duplicate id '" + doc.id + "'");
      stats_.tokens_read += estimate_tokens(doc);
      return ParsedRecord{std::move(doc)};
    } catch (const DataError& e) {
      return fail(e.what());
    }
  }
  if (in_.bad()) throw IoError("read failure on input stream");
  return std::nullopt;
}

ParsedShard parse_shard(std::istream& in) {
  ParsedShard out;
  ShardReader reader(in);
  while (auto rec = reader.next()) {
    if (auto* doc = std::get_if<Document>(&*rec)) {
      out.documents.push_back(std::move(*doc));
    } else {
      out.errors.push_back(std::get<ParseError>(*rec));
    }
  }
  out.stats = reader.stats();
  return out;
}

}  // namespace qc

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

#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>
#include <streambuf>

#include "qcurate/corpus.hpp"
#include "qcurate/error.hpp"

using namespace qc;

TEST_CASE("parse_shard reads well-formed records") {
  std::istringstream in(
      R"({"id":"a","text":"hello","lang":"en"})"
      "\n"
      R"({"id":"b","text":"hola","lang":"es","token_count":690})"
      "\n");
  const auto shard = parse_shard(in);
  REQUIRE(shard.documents.size() == 2);
  CHECK(shard.stats.documents_invalid == 0);
  CHECK(shard.stats.documents_read == 2);
  CHECK(shard.documents[1].token_count == 690u);
  CHECK(shard.stats.tokens_read == 2 + 690);
}

TEST_CASE("parse_shard skips and counts invalid lines") {
  std::string data = R"({"id":"a","text":"ok","lang":"en"})";
  data += "\n\xff\xfe\x80garbage\n";
  std::istringstream in(data);
  const auto shard = parse_shard(in);
  CHECK(shard.documents.size() == 1);
  CHECK(shard.stats.documents_invalid == 1);
  REQUIRE(shard.errors.size() == 1);
  CHECK(shard.errors[0].line == 2);
}

TEST_CASE("parse_shard rejects invalid UTF-8 inside a JSON string") {
  std::string data = "{\"id\":\"a\",\"text\":\"bad \xc3\x28 byte\",\"lang\":\"en\"}\n";
  std::istringstream in(data);
  const auto shard = parse_shard(in);
  CHECK(shard.documents.empty());
  CHECK(shard.stats.documents_invalid == 1);
}

TEST_CASE("parse_shard on an empty stream") {
  std::istringstream in("");
  const auto shard = parse_shard(in);
  CHECK(shard.documents.empty());
  CHECK(shard.stats.documents_read == 0);
}

TEST_CASE("schema violations are per-record errors") {
  std::istringstream in(
      R"({"id":"","text":"x","lang":"en"})"
      "\n"
      R"({"id":"a","text":5,"lang":"en"})"
      "\n"
      R"({"id":"b","text":"x"})"
      "\n"
      R"({"id":"c","text":"x","lang":"en","token_count":-3})"
      "\n"
      R"({"id":"d","text":"x","lang":"en"})"
      "\n"
      R"({"id":"d","text":"again","lang":"en"})"
      "\n");
  const auto shard = parse_shard(in);
  CHECK(shard.documents.size() == 1);
  CHECK(shard.stats.documents_invalid == 5);
  CHECK(shard.errors.back().message.find("duplicate") != std::string::npos);
  CHECK(shard.errors.back().line == 6);
}

TEST_CASE("estimate_tokens") {
  Document d{"id", "", "en", std::nullopt, {}};
  CHECK(estimate_tokens(d) == 0);
  d.text = "abcdefgh";
  CHECK(estimate_tokens(d) == 2);
  d.text = "abcdefghi";
  CHECK(estimate_tokens(d) == 3);
  d.text = "\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9";  // four code points, eight bytes
  CHECK(estimate_tokens(d) == 1);
  d.token_count = 690;
  CHECK(estimate_tokens(d) == 690);
}

TEST_CASE("document round trip preserves unknown keys") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Document d;
    d.id = "doc-" + std::to_string(rng());
    for (int i = 0; i < static_cast<int>(rng() % 40); ++i) d.text.push_back(static_cast<char>('a' + rng() % 26));
    d.text += " \"quoted\"\n\t\xe2\x82\xac";
    d.lang = trial % 2 ? "es" : "de-AT";
    if (trial % 3) d.token_count = rng() % 1000;
    if (trial % 4 == 0) d.extra["url"] = "https://example.org/" + std::to_string(trial);
    std::istringstream in(serialize_document(d) + "\n");
    const auto shard = parse_shard(in);
    REQUIRE(shard.documents.size() == 1);
    CHECK(shard.documents[0] == d);
  }
}

TEST_CASE("shard stats are additive across concatenation") {
  const std::string a = R"({"id":"a","text":"one two","lang":"en"})"
                        "\nnot json\n";
  const std::string b = R"({"id":"b","text":"three","lang":"en","token_count":9})"
                        "\n";
  std::istringstream ia(a), ib(b), iab(a + b);
  CHECK(parse_shard(ia).stats + parse_shard(ib).stats == parse_shard(iab).stats);
}

namespace {

// Streams `count` generated records without ever materializing the shard.
class GeneratedShard : public std::streambuf {
 public:
  GeneratedShard(std::size_t count, std::size_t text_len) : count_(count), text_(text_len, 'x') {}

 protected:
  int_type underflow() override {
    if (emitted_ == count_) return traits_type::eof();
    line_ = R"({"id":"g)" + std::to_string(emitted_) + R"(","text":")" + text_ + R"(","lang":"en"})" + "\n";
    ++emitted_;
    setg(line_.data(), line_.data(), line_.data() + line_.size());
    return traits_type::to_int_type(line_[0]);
  }

 private:
  std::size_t count_;
  std::size_t emitted_ = 0;
  std::string text_;
  std::string line_;
};

}  // namespace

TEST_CASE("reader memory stays bounded by one record") {
  constexpr std::size_t kCap = 16 * 1024;
  GeneratedShard gen(20'000, 4'000);  // ~80 MB of records, far above the cap
  std::istream in(&gen);
  ShardReader reader(in, kCap);
  std::size_t docs = 0;
  while (auto rec = reader.next()) docs += std::holds_alternative<Document>(*rec);
  CHECK(docs == 20'000);
  CHECK(reader.peak_buffer_bytes() <= kCap);
  CHECK(reader.stats().documents_invalid == 0);
}

TEST_CASE("oversized record is invalid and the shard continues") {
  std::string big = R"({"id":"big","text":")" + std::string(5000, 'y') + R"(","lang":"en"})";
  std::istringstream in(big + "\n" + R"({"id":"small","text":"s","lang":"en"})" + "\n");
  ShardReader reader(in, 1024);
  std::vector<ParsedRecord> recs;
  while (auto r = reader.next()) recs.push_back(*r);
  REQUIRE(recs.size() == 2);
  CHECK(std::holds_alternative<ParseError>(recs[0]));
  CHECK(std::get<Document>(recs[1]).id == "small");
  CHECK(reader.peak_buffer_bytes() <= 1024);
}

TEST_CASE("unreadable stream is a fatal I/O error") {
  std::ifstream missing("/nonexistent/shard.jsonl");
  CHECK_THROWS_AS(ShardReader{missing}, IoError);
}

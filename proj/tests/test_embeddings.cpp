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

#include "qcurate/embeddings.hpp"

#include <doctest.h>

#include <atomic>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "oracles.hpp"

using namespace qc;
using qc::testing::TempDir;

TEST_CASE("mock_embed is deterministic, unit norm and seed sensitive") {
  const auto a = mock_embed("some text", 64, 1);
  const auto b = mock_embed("some text", 64, 1);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * 64) == 0);
  CHECK(std::abs(a.norm() - 1.0f) < 1e-6);
  CHECK((mock_embed("some text", 64, 2).array() != a.array()).any());
  CHECK((mock_embed("other text", 64, 1).array() != a.array()).any());
  CHECK(mock_embed("", 1, 0).size() == 1);
  CHECK_THROWS_AS(mock_embed("x", 0, 0), DataError);
}

TEST_CASE("mock_embed components are centred") {
  double sum = 0;
  std::size_t count = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto v = mock_embed("text number " + std::to_string(i), 256, 3);
    sum += v.cast<double>().sum();
    count += 256;
  }
  CHECK(count >= 1'000'000);
  // raw components are uniform on [-1,1); normalized ones have scale ~1/sqrt(dim)
  CHECK(std::abs(sum / count) * std::sqrt(256.0) < 0.02);
}

namespace {

std::vector<EmbeddingVector> sample_vectors(int n, int dim) {
  std::vector<EmbeddingVector> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXf v = mock_embed("doc" + std::to_string(i), dim, 5) * 3.5f;
    v[0] = -1e-30f;  // subnormal-adjacent values must survive bitwise
    out.push_back({"id-" + std::to_string(i), "bb", v});
  }
  return out;
}

bool bitwise_equal(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST_CASE("store round trip is bitwise") {
  TempDir tmp;
  const auto vecs = sample_vectors(3, 17);
  store_write(tmp / "s.jqle", "bb", 17, vecs);
  const auto store = store_read(tmp / "s.jqle");
  CHECK(store.size() == 3);
  CHECK(store.dim() == 17);
  CHECK(store.backbone_id() == "bb");
  for (const auto& v : vecs) {
    const auto got = store.get(v.doc_id);
    REQUIRE(got);
    CHECK(bitwise_equal(got->values, v.values));
    CHECK(got->backbone_id == "bb");
  }
  CHECK_FALSE(store.get("missing").has_value());
}

TEST_CASE("store header layout is little-endian and bit-exact") {
  TempDir tmp;
  EmbeddingVector v{"ab", "xy", Eigen::VectorXf::Constant(2, 1.0f)};
  store_write(tmp / "s.jqle", "xy", 2, std::span(&v, 1));
  const std::string b = read_bytes(tmp / "s.jqle");
  const std::string expected_prefix = std::string("JQLE") + std::string("\x01\0\0\0", 4) +
                                      std::string("\x02\0\0\0", 4) + std::string("\x01\0\0\0\0\0\0\0", 8) +
                                      std::string("\x02\0", 2) + "xy" + std::string("\x02\0", 2) + "ab" +
                                      std::string("\x00\x00\x80\x3f\x00\x00\x80\x3f", 8);
  REQUIRE(b.size() >= expected_prefix.size());
  CHECK(b.substr(0, expected_prefix.size()) == expected_prefix);
  // index: id + offset of the record (24), then the trailer pointing at the index
  const std::size_t index_at = expected_prefix.size();
  CHECK(b.substr(index_at, 4) == std::string("\x02\0", 2) + "ab");
  CHECK(b.substr(index_at + 4, 8) == std::string("\x18\0\0\0\0\0\0\0", 8));
  CHECK(b.size() == index_at + 12 + 8);
  CHECK(static_cast<unsigned char>(b[b.size() - 8]) == index_at);
}

TEST_CASE("store reads do not depend on write order") {
  TempDir tmp;
  auto vecs = sample_vectors(20, 8);
  store_write(tmp / "a.jqle", "bb", 8, vecs);
  std::reverse(vecs.begin(), vecs.end());
  store_write(tmp / "b.jqle", "bb", 8, vecs);
  const auto a = store_read(tmp / "a.jqle");
  const auto b = store_read(tmp / "b.jqle");
  for (const auto& v : vecs) CHECK(bitwise_equal(a.get(v.doc_id)->values, b.get(v.doc_id)->values));
}

TEST_CASE("store rejects bad input and corrupt files") {
  TempDir tmp;
  auto vecs = sample_vectors(4, 8);
  store_write(tmp / "ok.jqle", "bb", 8, vecs);
  const std::string good = read_bytes(tmp / "ok.jqle");

  SUBCASE("wrong magic") {
    std::string bad = good;
    bad[0] = 'X';
    write_bytes(tmp / "bad.jqle", bad);
    CHECK_THROWS_AS(store_read(tmp / "bad.jqle"), FormatError);
  }
  SUBCASE("wrong version") {
    std::string bad = good;
    bad[4] = 9;
    write_bytes(tmp / "bad.jqle", bad);
    CHECK_THROWS_AS(store_read(tmp / "bad.jqle"), VersionError);
  }
  SUBCASE("truncated") {
    for (std::size_t cut : {good.size() - 1, good.size() - 9, good.size() / 2, std::size_t{10}}) {
      write_bytes(tmp / "bad.jqle", good.substr(0, cut));
      CHECK_THROWS_AS(store_read(tmp / "bad.jqle"), FormatError);
    }
  }
  SUBCASE("format error reports an offset") {
    write_bytes(tmp / "bad.jqle", good.substr(0, good.size() - 3));
    try {
      store_read(tmp / "bad.jqle");
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  SUBCASE("writer contract") {
    StoreWriter w(tmp / "w.jqle", "bb", 8);
    CHECK_THROWS_AS(w.append({"x", "bb", Eigen::VectorXf::Zero(7)}), DimensionMismatch);
    w.append({"x", "bb", Eigen::VectorXf::Zero(8)});
    CHECK_THROWS_AS(w.append({"x", "bb", Eigen::VectorXf::Zero(8)}), DataError);
    Eigen::VectorXf nan = Eigen::VectorXf::Zero(8);
    nan[3] = NAN;
    CHECK_THROWS_AS(w.append({"y", "bb", nan}), DataError);
  }
  SUBCASE("abandoned writer leaves no file") {
    {
      StoreWriter w(tmp / "gone.jqle", "bb", 8);
      w.append(vecs[0]);
    }
    CHECK_FALSE(std::filesystem::exists(tmp / "gone.jqle"));
    CHECK_FALSE(std::filesystem::exists(tmp / "gone.jqle.tmp"));
  }
}

TEST_CASE("store supports concurrent readers") {
  TempDir tmp;
  const auto vecs = sample_vectors(200, 32);
  store_write(tmp / "s.jqle", "bb", 32, vecs);
  const auto store = store_read(tmp / "s.jqle");
  std::atomic<int> mismatches{0};
  {
    std::vector<std::jthread> readers;
    for (int t = 0; t < 4; ++t) {
      readers.emplace_back([&, t] {
        for (int rep = 0; rep < 5; ++rep)
          for (std::size_t i = t; i < vecs.size(); i += 3)
            if (!bitwise_equal(store.get(vecs[i].doc_id)->values, vecs[i].values)) ++mismatches;
      });
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("providers are substitutable") {
  TempDir tmp;
  std::vector<Document> docs;
  for (int i = 0; i < 10; ++i) docs.push_back({"d" + std::to_string(i), "text " + std::to_string(i), "en", {}, {}});
  MockProvider mock(16, 4);
  const auto vecs = mock.embed(docs);
  store_write(tmp / "m.jqle", mock.backbone_id(), 16, vecs);
  auto from_store = make_provider("store:" + (tmp / "m.jqle").string());
  const auto again = from_store->embed(docs);
  REQUIRE(again.size() == vecs.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    CHECK(again[i].doc_id == vecs[i].doc_id);
    CHECK(bitwise_equal(again[i].values, vecs[i].values));
  }
  docs.push_back({"unknown", "x", "en", {}, {}});
  CHECK_THROWS_AS(from_store->embed(docs), EmbeddingBatchError);
}

TEST_CASE("make_provider parses URIs") {
  CHECK(make_provider("mock:8")->dim() == 8);
  CHECK(make_provider("mock:8:3")->backbone_id() == "mock-d8-s3");
  CHECK_THROWS_AS(make_provider("mock:abc"), DataError);
  CHECK_THROWS_AS(make_provider("ftp://x"), DataError);
  CHECK_THROWS_AS(make_provider("store:/nonexistent.jqle"), IoError);
  CHECK(make_provider("http://127.0.0.1:1/embed") != nullptr);
}

// ---------------------------------------------------------------------------
// Remote client against an in-process server

namespace {

struct FakeEmbeddingServer {
  httplib::Server server;
  std::jthread thread;
  int port = 0;
  std::mutex mu;
  std::vector<std::size_t> batch_sizes;
  std::atomic<int> failures_left{0};
  std::atomic<int> status_on_failure{503};
  std::atomic<int> dim{4};
  std::atomic<bool> wrong_dim_on_second_row{false};

  FakeEmbeddingServer() {
    server.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      if (failures_left > 0) {
        --failures_left;
        res.status = status_on_failure;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      const auto& texts = body.at("texts");
      {
        std::lock_guard lock(mu);
        batch_sizes.push_back(texts.size());
      }
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t i = 0; i < texts.size(); ++i) {
        const int d = (wrong_dim_on_second_row && i == 1) ? dim + 1 : dim.load();
        const auto v = mock_embed(texts[i].get<std::string>(), d, 0);
        rows.push_back(std::vector<float>(v.data(), v.data() + v.size()));
      }
      res.set_content(nlohmann::json{{"embeddings", rows}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::jthread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeEmbeddingServer() { server.stop(); }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/embed"; }
};

std::vector<Document> docs_n(std::size_t n) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n; ++i) docs.push_back({"r" + std::to_string(i), "remote " + std::to_string(i), "en", {}, {}});
  return docs;
}

}  // namespace

TEST_CASE("remote client batches and preserves order") {
  FakeEmbeddingServer srv;
  const auto docs = docs_n(2500);
  const auto out = remote_embed_batch(srv.url(), docs, 1000);
  REQUIRE(out.size() == 2500);
  auto sizes = srv.batch_sizes;
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{500, 1000, 1000});
  for (std::size_t i = 0; i < docs.size(); i += 97) {
    CHECK(out[i].doc_id == docs[i].id);
    CHECK(bitwise_equal(out[i].values, mock_embed(docs[i].text, 4, 0)));
  }
}

TEST_CASE("remote client retries transient failures transparently") {
  FakeEmbeddingServer srv;
  const auto docs = docs_n(30);
  RemoteConfig cfg;
  cfg.endpoint = srv.url();
  cfg.batch_size = 10;
  cfg.max_in_flight = 1;
  cfg.initial_backoff = std::chrono::milliseconds(1);
  const auto clean = RemoteProvider(cfg).embed(docs);
  srv.failures_left = 2;
  const auto retried = RemoteProvider(cfg).embed(docs);
  REQUIRE(clean.size() == retried.size());
  for (std::size_t i = 0; i < clean.size(); ++i) CHECK(bitwise_equal(clean[i].values, retried[i].values));
}

TEST_CASE("remote client surfaces exhausted retries with the failing ids") {
  FakeEmbeddingServer srv;
  srv.failures_left = 100;
  RemoteConfig cfg;
  cfg.endpoint = srv.url();
  cfg.batch_size = 5;
  cfg.max_retries = 2;
  cfg.max_in_flight = 1;
  cfg.initial_backoff = std::chrono::milliseconds(1);
  try {
    RemoteProvider(cfg).embed(docs_n(5));
    FAIL("expected EmbeddingBatchError");
  } catch (const EmbeddingBatchError& e) {
    CHECK(e.doc_ids() == std::vector<std::string>{"r0", "r1", "r2", "r3", "r4"});
  }
  CHECK(srv.failures_left == 97);
}

TEST_CASE("remote client does not retry client errors") {
  FakeEmbeddingServer srv;
  srv.failures_left = 100;
  srv.status_on_failure = 400;
  RemoteConfig cfg;
  cfg.endpoint = srv.url();
  cfg.initial_backoff = std::chrono::milliseconds(1);
  CHECK_THROWS_AS(RemoteProvider(cfg).embed(docs_n(3)), EmbeddingBatchError);
  CHECK(srv.failures_left == 99);
}

TEST_CASE("remote client rejects dimension mismatches") {
  FakeEmbeddingServer srv;
  RemoteConfig cfg;
  cfg.endpoint = srv.url();
  cfg.expected_dim = 8;
  try {
    RemoteProvider(cfg).embed(docs_n(3));
    FAIL("expected DimensionMismatch");
  } catch (const DimensionMismatch& e) {
    CHECK(e.expected() == 8);
    CHECK(e.actual() == 4);
  }
  srv.wrong_dim_on_second_row = true;
  cfg.expected_dim = 0;
  CHECK_THROWS_AS(RemoteProvider(cfg).embed(docs_n(3)), DimensionMismatch);
}

TEST_CASE("remote client reports an unreachable endpoint after retries") {
  RemoteConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/embed";
  cfg.max_retries = 1;
  cfg.initial_backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::seconds(2);
  CHECK_THROWS_AS(RemoteProvider(cfg).embed(docs_n(2)), EmbeddingBatchError);
}

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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "qcurate/corpus.hpp"
#include "qcurate/error.hpp"

namespace qc {

struct EmbeddingVector {
  std::string doc_id;
  std::string backbone_id;
  Eigen::VectorXf values;

  Eigen::Index dim() const { return values.size(); }
};

/// Deterministic stand-in for a frozen backbone: a seeded hash of `text`
/// expanded to `dim` uniform components in [-1, 1), then scaled to unit L2
/// norm. Bitwise reproducible for equal (text, dim, seed).
Eigen::VectorXf mock_embed(std::string_view text, int dim, std::uint64_t seed);

inline constexpr char kMockBackbonePrefix[] = "mock";

// ---------------------------------------------------------------------------
// Binary store ("JQLE", little-endian):
//   header   magic[4] | version u32 | dim u32 | count u64 | u16 len + backbone_id
//   records  u16 len + doc_id | dim x binary32
//   index    count x (u16 len + doc_id | offset u64)
//   trailer  index_offset u64
// Record offsets are absolute file positions of the record's id length field.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kStoreVersion = 1;

/// Streaming writer. Data goes to `<path>.tmp` and is renamed over `path`
/// by finish(); a writer destroyed before finish() leaves nothing behind.
class StoreWriter {
 public:
  StoreWriter(std::filesystem::path path, std::string backbone_id, int dim);
  ~StoreWriter();
  StoreWriter(const StoreWriter&) = delete;
  StoreWriter& operator=(const StoreWriter&) = delete;

  void append(const EmbeddingVector& v);
  void finish();
  std::uint64_t count() const { return index_.size(); }

 private:
  struct Impl;
  std::filesystem::path path_;
  std::filesystem::path tmp_path_;
  std::string backbone_id_;
  int dim_;
  std::unique_ptr<Impl> impl_;
  std::vector<std::pair<std::string, std::uint64_t>> index_;
  std::unordered_map<std::string, std::size_t> seen_;
  bool finished_ = false;
};

/// Read-only random-access view of a store file. Only the header and index
/// live in memory; records are read on demand with positional reads, so one
/// store may be shared by concurrent readers.
class EmbeddingStore {
 public:
  static EmbeddingStore open(const std::filesystem::path& path);

  EmbeddingStore(EmbeddingStore&&) noexcept;
  EmbeddingStore& operator=(EmbeddingStore&&) noexcept;
  ~EmbeddingStore();

  const std::string& backbone_id() const { return backbone_id_; }
  int dim() const { return dim_; }
  std::uint64_t size() const { return ids_.size(); }
  /// Ids in file order.
  const std::vector<std::string>& ids() const { return ids_; }
  bool contains(std::string_view doc_id) const;

  /// nullopt when the id is not in the store.
  std::optional<EmbeddingVector> get(std::string_view doc_id) const;

 private:
  EmbeddingStore() = default;

  int fd_ = -1;
  std::string backbone_id_;
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint64_t> offsets_;
};

void store_write(const std::filesystem::path& path, const std::string& backbone_id, int dim,
                 std::span<const EmbeddingVector> vectors);
inline EmbeddingStore store_read(const std::filesystem::path& path) {
  return EmbeddingStore::open(path);
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

class DimensionMismatch : public DataError {
 public:
  DimensionMismatch(std::int64_t expected, std::int64_t actual);
  std::int64_t expected() const { return expected_; }
  std::int64_t actual() const { return actual_; }

 private:
  std::int64_t expected_;
  std::int64_t actual_;
};

/// A batch that kept failing after every retry.
class EmbeddingBatchError : public IoError {
 public:
  EmbeddingBatchError(const std::string& what, std::vector<std::string> doc_ids)
      : IoError(what), doc_ids_(std::move(doc_ids)) {}
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }

 private:
  std::vector<std::string> doc_ids_;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string backbone_id() const = 0;
  /// 0 when not known before the first response.
  virtual int dim() const = 0;
  /// One vector per document, in input order. Must be safe to call from
  /// several threads at once.
  virtual std::vector<EmbeddingVector> embed(std::span<const Document> docs) = 0;
};

class MockProvider final : public EmbeddingProvider {
 public:
  MockProvider(int dim, std::uint64_t seed);
  std::string backbone_id() const override;
  int dim() const override { return dim_; }
  std::vector<EmbeddingVector> embed(std::span<const Document> docs) override;

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Looks documents up by id in a precomputed store. A missing id fails the call.
class StoreProvider final : public EmbeddingProvider {
 public:
  explicit StoreProvider(EmbeddingStore store) : store_(std::move(store)) {}
  std::string backbone_id() const override { return store_.backbone_id(); }
  int dim() const override { return store_.dim(); }
  std::vector<EmbeddingVector> embed(std::span<const Document> docs) override;

 private:
  EmbeddingStore store_;
};

struct RemoteConfig {
  std::string endpoint;  // http(s)://host[:port]/path
  std::size_t batch_size = 1000;
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::milliseconds max_backoff{10'000};
  std::size_t max_in_flight = 4;
  std::chrono::seconds timeout{120};
  int expected_dim = 0;  // 0: take the first response's dimension
  std::string backbone_id = "remote";
};

/// Client for the JSON embedding protocol:
///   POST {"texts": [...]}  ->  {"embeddings": [[...], ...]}
/// Transient failures (connection errors, 429, 5xx) are retried with
/// exponential backoff; other statuses fail the batch immediately.
class RemoteProvider final : public EmbeddingProvider {
 public:
  explicit RemoteProvider(RemoteConfig config);
  std::string backbone_id() const override { return config_.backbone_id; }
  int dim() const override { return config_.expected_dim; }
  std::vector<EmbeddingVector> embed(std::span<const Document> docs) override;

  const RemoteConfig& config() const { return config_; }

 private:
  RemoteConfig config_;
};

std::vector<EmbeddingVector> remote_embed_batch(const std::string& endpoint,
                                                std::span<const Document> docs,
                                                std::size_t batch_size);

/// Provider from a URI: "mock:<dim>[:<seed>]", "store:<path>",
/// or an http(s) endpoint.
std::unique_ptr<EmbeddingProvider> make_provider(const std::string& uri);

}  // namespace qc

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

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "qcurate/random.hpp"

namespace qc {

Eigen::VectorXf mock_embed(std::string_view text, int dim, std::uint64_t seed) {
  if (dim < 1) throw DataError("mock_embed: dim must be >= 1");
  // FNV-1a over the text, keyed by the seed.
  std::uint64_t h = 0xcbf29ce484222325ULL ^ splitmix64(seed);
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h = splitmix64(h ^ seed);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) {
    const std::uint64_t r = splitmix64(h + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1));
    v[i] = static_cast<double>(r >> 11) * 0x1.0p-52 - 1.0;
  }
  const double norm = v.norm();
  if (norm > 0.0) {
    v /= norm;
  } else {
    v.setZero();
    v[0] = 1.0;
  }
  return v.cast<float>();
}

// ---------------------------------------------------------------------------
// little-endian helpers

namespace {

constexpr char kMagic[4] = {'J', 'Q', 'L', 'E'};

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

void put_string16(std::string& out, std::string_view s, const char* what) {
  if (s.size() > 0xFFFF) throw DataError(std::string(what) + " longer than 65535 bytes");
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.append(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// StoreWriter

struct StoreWriter::Impl {
  std::ofstream out;
  std::uint64_t offset = 0;
  std::string buf;

  void write(const std::string& bytes) {
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("store write failed");
    offset += bytes.size();
  }
};

StoreWriter::StoreWriter(std::filesystem::path path, std::string backbone_id, int dim)
    : path_(std::move(path)), backbone_id_(std::move(backbone_id)), dim_(dim) {
  if (dim_ < 1) throw DataError("store dim must be >= 1");
  tmp_path_ = path_;
  tmp_path_ += ".tmp";
  impl_ = std::make_unique<Impl>();
  impl_->out.open(tmp_path_, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw IoError("cannot open " + tmp_path_.string() + " for writing");
  std::string header(kMagic, 4);
  put_le<std::uint32_t>(header, kStoreVersion);
  put_le<std::uint32_t>(header, static_cast<std::uint32_t>(dim_));
  put_le<std::uint64_t>(header, 0);  // count, patched by finish()
  put_string16(header, backbone_id_, "backbone_id");
  impl_->write(header);
}

StoreWriter::~StoreWriter() {
  if (!finished_) {
    impl_->out.close();
    std::error_code ec;
    std::filesystem::remove(tmp_path_, ec);
  }
}

void StoreWriter::append(const EmbeddingVector& v) {
  if (finished_) throw DataError("store already finished");
  if (v.values.size() != dim_) throw DimensionMismatch(dim_, v.values.size());
  if (v.doc_id.empty()) throw DataError("store record needs a doc_id");
  if (!v.values.allFinite()) throw DataError("non-finite embedding for '" + v.doc_id + "'");
  if (!seen_.emplace(v.doc_id, index_.size()).second) {
    throw DataError("duplicate doc_id '" + v.doc_id + "' in store");
  }
  index_.emplace_back(v.doc_id, impl_->offset);
  std::string& rec = impl_->buf;
  rec.clear();
  put_string16(rec, v.doc_id, "doc_id");
  for (Eigen::Index i = 0; i < v.values.size(); ++i) {
    put_le<std::uint32_t>(rec, std::bit_cast<std::uint32_t>(v.values[i]));
  }
  impl_->write(rec);
}

void StoreWriter::finish() {
  if (finished_) return;
  const std::uint64_t index_offset = impl_->offset;
  std::string block;
  for (const auto& [id, off] : index_) {
    put_string16(block, id, "doc_id");
    put_le<std::uint64_t>(block, off);
  }
  put_le<std::uint64_t>(block, index_offset);
  impl_->write(block);
  std::string count;
  put_le<std::uint64_t>(count, index_.size());
  impl_->out.seekp(12);
  impl_->out.write(count.data(), 8);
  impl_->out.close();
  if (!impl_->out) throw IoError("failed to finalize " + tmp_path_.string());
  std::filesystem::rename(tmp_path_, path_);
  finished_ = true;
}

void store_write(const std::filesystem::path& path, const std::string& backbone_id, int dim,
                 std::span<const EmbeddingVector> vectors) {
  StoreWriter w(path, backbone_id, dim);
  for (const auto& v : vectors) w.append(v);
  w.finish();
}

// ---------------------------------------------------------------------------
// EmbeddingStore

namespace {

void pread_exact(int fd, void* dst, std::size_t n, std::uint64_t offset) {
  auto* p = static_cast<char*>(dst);
  while (n > 0) {
    const ssize_t got = ::pread(fd, p, n, static_cast<off_t>(offset));
    if (got < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("store read failed: ") + std::strerror(errno));
    }
    if (got == 0) throw FormatError("unexpected end of store file", offset);
    p += got;
    n -= static_cast<std::size_t>(got);
    offset += static_cast<std::uint64_t>(got);
  }
}

}  // namespace

EmbeddingStore::EmbeddingStore(EmbeddingStore&& o) noexcept
    : fd_(std::exchange(o.fd_, -1)),
      backbone_id_(std::move(o.backbone_id_)),
      dim_(o.dim_),
      ids_(std::move(o.ids_)),
      offsets_(std::move(o.offsets_)) {}

EmbeddingStore& EmbeddingStore::operator=(EmbeddingStore&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(o.fd_, -1);
    backbone_id_ = std::move(o.backbone_id_);
    dim_ = o.dim_;
    ids_ = std::move(o.ids_);
    offsets_ = std::move(o.offsets_);
  }
  return *this;
}

EmbeddingStore::~EmbeddingStore() {
  if (fd_ >= 0) ::close(fd_);
}

EmbeddingStore EmbeddingStore::open(const std::filesystem::path& path) {
  EmbeddingStore s;
  s.fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (s.fd_ < 0) throw IoError("cannot open store " + path.string() + ": " + std::strerror(errno));
  std::error_code ec;
  const std::uint64_t file_size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat store " + path.string());

  constexpr std::uint64_t kFixedHeader = 4 + 4 + 4 + 8 + 2;
  if (file_size < kFixedHeader) throw FormatError("store file too short for header", file_size);
  unsigned char hdr[kFixedHeader];
  pread_exact(s.fd_, hdr, kFixedHeader, 0);
  if (std::memcmp(hdr, kMagic, 4) != 0) throw FormatError("bad magic, not a JQLE store", 0);
  const auto version = get_le<std::uint32_t>(hdr + 4);
  if (version != kStoreVersion) {
    throw VersionError("unsupported store version " + std::to_string(version), 4);
  }
  const auto dim = get_le<std::uint32_t>(hdr + 8);
  if (dim == 0 || dim > (1u << 24)) throw FormatError("invalid dim " + std::to_string(dim), 8);
  const auto count = get_le<std::uint64_t>(hdr + 12);
  const auto backbone_len = get_le<std::uint16_t>(hdr + 20);
  const std::uint64_t header_end = kFixedHeader + backbone_len;
  if (header_end + 8 > file_size) throw FormatError("truncated header", kFixedHeader);
  s.backbone_id_.resize(backbone_len);
  pread_exact(s.fd_, s.backbone_id_.data(), backbone_len, kFixedHeader);
  s.dim_ = static_cast<int>(dim);

  unsigned char trailer[8];
  pread_exact(s.fd_, trailer, 8, file_size - 8);
  const auto index_offset = get_le<std::uint64_t>(trailer);
  if (index_offset < header_end || index_offset > file_size - 8) {
    throw FormatError("index offset out of range", file_size - 8);
  }
  std::vector<unsigned char> index(file_size - 8 - index_offset);
  if (!index.empty()) pread_exact(s.fd_, index.data(), index.size(), index_offset);

  const std::uint64_t record_payload = 4ull * dim;
  std::uint64_t records_bytes = 0;
  std::size_t pos = 0;
  s.ids_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (pos + 2 > index.size()) throw FormatError("truncated index", index_offset + pos);
    const auto len = get_le<std::uint16_t>(&index[pos]);
    if (pos + 2 + len + 8 > index.size()) throw FormatError("truncated index", index_offset + pos);
    std::string id(reinterpret_cast<const char*>(&index[pos + 2]), len);
    const auto off = get_le<std::uint64_t>(&index[pos + 2 + len]);
    const std::uint64_t rec_size = 2 + len + record_payload;
    if (off < header_end || off + rec_size > index_offset) {
      throw FormatError("record offset out of range for '" + id + "'", index_offset + pos);
    }
    if (!s.offsets_.emplace(id, off).second) {
      throw FormatError("duplicate id '" + id + "' in index", index_offset + pos);
    }
    s.ids_.push_back(std::move(id));
    records_bytes += rec_size;
    pos += 2 + len + 8;
  }
  if (pos != index.size()) throw FormatError("index size does not match record count", index_offset + pos);
  if (header_end + records_bytes != index_offset) {
    throw FormatError("record region size does not match index", header_end);
  }
  return s;
}

bool EmbeddingStore::contains(std::string_view doc_id) const {
  return offsets_.find(std::string(doc_id)) != offsets_.end();
}

std::optional<EmbeddingVector> EmbeddingStore::get(std::string_view doc_id) const {
  auto it = offsets_.find(std::string(doc_id));
  if (it == offsets_.end()) return std::nullopt;
  const std::uint64_t off = it->second;
  const std::size_t id_len = doc_id.size();
  std::vector<unsigned char> buf(2 + id_len + 4ull * dim_);
  pread_exact(fd_, buf.data(), buf.size(), off);
  if (get_le<std::uint16_t>(buf.data()) != id_len ||
      std::memcmp(buf.data() + 2, doc_id.data(), id_len) != 0) {
    throw FormatError("record id does not match index for '" + std::string(doc_id) + "'", off);
  }
  EmbeddingVector v;
  v.doc_id = std::string(doc_id);
  v.backbone_id = backbone_id_;
  v.values.resize(dim_);
  const unsigned char* p = buf.data() + 2 + id_len;
  for (int i = 0; i < dim_; ++i) v.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
  return v;
}

// ---------------------------------------------------------------------------
// Providers

DimensionMismatch::DimensionMismatch(std::int64_t expected, std::int64_t actual)
    : DataError("embedding dimension mismatch: expected " + std::to_string(expected) + ", got " +
                std::to_string(actual)),
      expected_(expected),
      actual_(actual) {}

MockProvider::MockProvider(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw DataError("mock provider dim must be >= 1");
}

std::string MockProvider::backbone_id() const {
  return std::string(kMockBackbonePrefix) + "-d" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

std::vector<EmbeddingVector> MockProvider::embed(std::span<const Document> docs) {
  std::vector<EmbeddingVector> out;
  out.reserve(docs.size());
  const std::string backbone = backbone_id();
  for (const auto& d : docs) out.push_back({d.id, backbone, mock_embed(d.text, dim_, seed_)});
  return out;
}

std::vector<EmbeddingVector> StoreProvider::embed(std::span<const Document> docs) {
  std::vector<EmbeddingVector> out;
  out.reserve(docs.size());
  std::vector<std::string> missing;
  for (const auto& d : docs) {
    auto v = store_.get(d.id);
    if (!v) {
      missing.push_back(d.id);
      continue;
    }
    out.push_back(std::move(*v));
  }
  if (!missing.empty()) {
    throw EmbeddingBatchError(std::to_string(missing.size()) + " document(s) missing from store",
                              std::move(missing));
  }
  return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const std::string& uri) {
  if (uri.rfind("mock:", 0) == 0) {
    const std::string rest = uri.substr(5);
    const auto colon = rest.find(':');
    try {
      const int dim = std::stoi(rest.substr(0, colon));
      const std::uint64_t seed = colon == std::string::npos ? 0 : std::stoull(rest.substr(colon + 1));
      return std::make_unique<MockProvider>(dim, seed);
    } catch (const std::logic_error&) {
      throw DataError("bad mock provider uri '" + uri + "', expected mock:<dim>[:<seed>]");
    }
  }
  if (uri.rfind("store:", 0) == 0) {
    return std::make_unique<StoreProvider>(EmbeddingStore::open(uri.substr(6)));
  }
  if (uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0) {
    RemoteConfig cfg;
    cfg.endpoint = uri;
    return std::make_unique<RemoteProvider>(std::move(cfg));
  }
  throw DataError("unknown provider uri '" + uri + "' (expected mock:, store:, http(s):)");
}

}  // namespace qc

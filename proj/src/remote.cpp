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

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>


namespace qc {

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw DataError("bad endpoint url '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool is_transient(int status) { return status == 429 || status >= 500; }

// One batch, retried. Returns rows in request order.
std::vector<Eigen::VectorXf> post_batch(const RemoteConfig& cfg, const Endpoint& ep,
                                        std::span<const Document> docs) {
  nlohmann::json body;
  body["texts"] = nlohmann::json::array();
  for (const auto& d : docs) body["texts"].push_back(d.text);
  const std::string payload = body.dump();

  httplib::Client client(ep.base);
  client.set_connection_timeout(cfg.timeout);
  client.set_read_timeout(cfg.timeout);
  client.set_write_timeout(cfg.timeout);

  auto ids = [&] {
    std::vector<std::string> out;
    for (const auto& d : docs) out.push_back(d.id);
    return out;
  };

  auto delay = cfg.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay = std::min(delay * 2, cfg.max_backoff);
    }
    auto res = client.Post(ep.path, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      if (is_transient(res->status)) continue;
      throw EmbeddingBatchError("embedding request rejected: " + last_error, ids());
    }
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw EmbeddingBatchError(std::string("malformed embedding response: ") + e.what(), ids());
    }
    auto emb = reply.find("embeddings");
    if (emb == reply.end() || !emb->is_array() || emb->size() != docs.size()) {
      throw EmbeddingBatchError("embedding response must hold one row per text", ids());
    }
    std::vector<Eigen::VectorXf> rows;
    rows.reserve(docs.size());
    for (const auto& row : *emb) {
      if (!row.is_array()) throw EmbeddingBatchError("embedding row is not an array", ids());
      Eigen::VectorXf v(static_cast<Eigen::Index>(row.size()));
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (!row[i].is_number()) throw EmbeddingBatchError("non-numeric embedding value", ids());
        v[static_cast<Eigen::Index>(i)] = row[i].get<float>();
      }
      if (!rows.empty() && v.size() != rows.front().size()) {
        throw DimensionMismatch(rows.front().size(), v.size());
      }
      rows.push_back(std::move(v));
    }
    return rows;
  }
  throw EmbeddingBatchError("embedding batch failed after " + std::to_string(cfg.max_retries + 1) +
                                " attempts: " + last_error,
                            ids());
}

}  // namespace

RemoteProvider::RemoteProvider(RemoteConfig config) : config_(std::move(config)) {
  if (config_.batch_size < 1) throw DataError("batch_size must be >= 1");
  if (config_.max_in_flight < 1) config_.max_in_flight = 1;
  split_endpoint(config_.endpoint);
}

std::vector<EmbeddingVector> RemoteProvider::embed(std::span<const Document> docs) {
  const Endpoint ep = split_endpoint(config_.endpoint);
  const std::size_t n_batches = (docs.size() + config_.batch_size - 1) / config_.batch_size;
  std::vector<std::vector<Eigen::VectorXf>> results(n_batches);
  std::vector<std::exception_ptr> errors(n_batches);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t b = next++; b < n_batches; b = next++) {
      const std::size_t lo = b * config_.batch_size;
      const std::size_t hi = std::min(docs.size(), lo + config_.batch_size);
      try {
        results[b] = post_batch(config_, ep, docs.subspan(lo, hi - lo));
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(config_.max_in_flight, n_batches);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<EmbeddingVector> out;
  out.reserve(docs.size());
  Eigen::Index dim = config_.expected_dim;
  std::size_t i = 0;
  for (auto& batch : results) {
    for (auto& row : batch) {
      if (dim == 0) dim = row.size();
      if (row.size() != dim) throw DimensionMismatch(dim, row.size());
      out.push_back({docs[i].id, config_.backbone_id, std::move(row)});
      ++i;
    }
  }
  return out;
}

std::vector<EmbeddingVector> remote_embed_batch(const std::string& endpoint,
                                                std::span<const Document> docs,
                                                std::size_t batch_size) {
  RemoteConfig cfg;
  cfg.endpoint = endpoint;
  cfg.batch_size = batch_size;
  return RemoteProvider(std::move(cfg)).embed(docs);
}

}  // namespace qc

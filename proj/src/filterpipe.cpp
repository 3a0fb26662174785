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

#include "qcurate/filterpipe.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "qcurate/corpus.hpp"
#include "qcurate/metrics.hpp"

namespace qc {

namespace fs = std::filesystem;

void EnsembleConfig::validate() const {
  if (heads.empty()) throw DataError("ensemble needs at least one head");
  std::set<std::string> ids;
  for (const auto& m : heads) {
    if (m.head.head_id != m.spec.head_id) {
      throw DataError("head '" + m.head.head_id + "' paired with threshold for '" + m.spec.head_id + "'");
    }
    if (!ids.insert(m.head.head_id).second) throw DataError("duplicate head id '" + m.head.head_id + "'");
  }
}

EnsembleConfig make_ensemble(std::vector<RegressionHead> heads,
                             const std::vector<ThresholdSpec>& specs) {
  EnsembleConfig cfg;
  for (auto& h : heads) {
    const ThresholdSpec* match = nullptr;
    for (const auto& s : specs) {
      if (s.head_id != h.head_id) continue;
      if (match) throw DataError("more than one threshold for head '" + h.head_id + "'");
      match = &s;
    }
    if (!match) throw DataError("no threshold for head '" + h.head_id + "'");
    cfg.heads.push_back({std::move(h), *match});
  }
  cfg.validate();
  return cfg;
}

Decision decide(const std::map<std::string, double>& scores, const EnsembleConfig& config) {
  Decision d;
  d.keep = true;
  d.passed.reserve(config.heads.size());
  for (const auto& m : config.heads) {
    auto it = scores.find(m.head.head_id);
    if (it == scores.end()) throw DataError("no score for head '" + m.head.head_id + "'");
    const bool pass = it->second > m.spec.threshold_value;
    d.passed.push_back(pass);
    d.keep = d.keep && pass;
  }
  return d;
}

double FilterStats::retention_docs() const {
  return docs_in == 0 ? 0.0 : static_cast<double>(docs_kept) / static_cast<double>(docs_in);
}

double FilterStats::retention_tokens() const {
  return tokens_in == 0 ? 0.0 : static_cast<double>(tokens_kept) / static_cast<double>(tokens_in);
}

FilterStats& FilterStats::operator+=(const FilterStats& o) {
  docs_in += o.docs_in;
  docs_kept += o.docs_kept;
  docs_dropped += o.docs_dropped;
  docs_errored += o.docs_errored;
  tokens_in += o.tokens_in;
  tokens_kept += o.tokens_kept;
  tokens_dropped += o.tokens_dropped;
  for (const auto& [k, v] : o.per_head_pass_counts) per_head_pass_counts[k] += v;
  return *this;
}

void to_json(nlohmann::json& j, const FilterStats& s) {
  j = {{"docs_in", s.docs_in},
       {"docs_kept", s.docs_kept},
       {"docs_dropped", s.docs_dropped},
       {"docs_errored", s.docs_errored},
       {"tokens_in", s.tokens_in},
       {"tokens_kept", s.tokens_kept},
       {"tokens_dropped", s.tokens_dropped},
       {"per_head_pass_counts", s.per_head_pass_counts},
       {"retention_docs", s.retention_docs()},
       {"retention_tokens", s.retention_tokens()}};
}

void from_json(const nlohmann::json& j, FilterStats& s) {
  j.at("docs_in").get_to(s.docs_in);
  j.at("docs_kept").get_to(s.docs_kept);
  j.at("docs_dropped").get_to(s.docs_dropped);
  j.at("docs_errored").get_to(s.docs_errored);
  j.at("tokens_in").get_to(s.tokens_in);
  j.at("tokens_kept").get_to(s.tokens_kept);
  j.at("tokens_dropped").get_to(s.tokens_dropped);
  j.at("per_head_pass_counts").get_to(s.per_head_pass_counts);
}

double PipelineResult::docs_per_minute() const {
  return seconds > 0.0 ? 60.0 * static_cast<double>(stats.docs_in) / seconds : 0.0;
}

double PipelineResult::tokens_per_minute() const {
  return seconds > 0.0 ? 60.0 * static_cast<double>(stats.tokens_in) / seconds : 0.0;
}

std::vector<std::vector<double>> score_batch(const EnsembleConfig& config,
                                             std::span<const EmbeddingVector> vectors) {
  std::vector<std::vector<double>> out(config.heads.size());
  if (vectors.empty()) return out;
  const Eigen::Index dim = vectors.front().values.size();
  Eigen::MatrixXf x(dim, static_cast<Eigen::Index>(vectors.size()));
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].values.size() != dim) throw DimensionMismatch(dim, vectors[i].values.size());
    x.col(static_cast<Eigen::Index>(i)) = vectors[i].values;
  }
  for (std::size_t h = 0; h < config.heads.size(); ++h) {
    const Eigen::RowVectorXf s = forward_batch(config.heads[h].head, x);
    out[h].assign(s.data(), s.data() + s.size());
  }
  return out;
}

namespace {

struct ShardPaths {
  fs::path kept, rejects, stats, done, failed;
};

ShardPaths shard_paths(const fs::path& out_dir, const std::string& name) {
  return {out_dir / "kept" / name, out_dir / "rejects" / name, out_dir / "stats" / (name + ".json"),
          out_dir / (name + ".done"), out_dir / (name + ".failed")};
}

fs::path tmp_of(const fs::path& p) {
  auto t = p;
  t += ".tmp";
  return t;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

FilterStats read_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("completed shard has no stats file " + path.string());
  try {
    return nlohmann::json::parse(in).get<FilterStats>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad stats file " + path.string() + ": " + e.what());
  }
}

class ShardProcessor {
 public:
  ShardProcessor(EmbeddingProvider& provider, const EnsembleConfig& config,
                 const PipelineOptions& options)
      : provider_(provider), config_(config), options_(options) {}

  FilterStats run(const fs::path& input, const ShardPaths& paths) {
    std::ifstream in(input, std::ios::binary);
    if (!in) throw IoError("cannot open shard " + input.string());
    std::ofstream kept(tmp_of(paths.kept), std::ios::binary | std::ios::trunc);
    if (!kept) throw IoError("cannot open " + tmp_of(paths.kept).string());
    std::ofstream rejects;
    if (options_.keep_rejects) {
      rejects.open(tmp_of(paths.rejects), std::ios::binary | std::ios::trunc);
      if (!rejects) throw IoError("cannot open " + tmp_of(paths.rejects).string());
    }

    FilterStats stats;
    for (const auto& m : config_.heads) stats.per_head_pass_counts[m.head.head_id] = 0;
    ShardReader reader(in, options_.max_record_bytes);
    std::vector<Document> batch;
    batch.reserve(options_.batch_size);
    while (auto rec = reader.next()) {
      if (auto* doc = std::get_if<Document>(&*rec)) {
        batch.push_back(std::move(*doc));
        if (batch.size() >= options_.batch_size) flush(batch, stats, kept, rejects);
      }
    }
    flush(batch, stats, kept, rejects);
    stats.docs_in = reader.stats().documents_read;
    stats.docs_errored = reader.stats().documents_invalid;
    stats.tokens_in = reader.stats().tokens_read;

    kept.close();
    if (!kept) throw IoError("write failed for " + paths.kept.string());
    if (options_.keep_rejects) {
      rejects.close();
      if (!rejects) throw IoError("write failed for " + paths.rejects.string());
    }
    return stats;
  }

 private:
  void flush(std::vector<Document>& batch, FilterStats& stats, std::ofstream& kept,
             std::ofstream& rejects) {
    if (batch.empty()) return;
    const auto vectors = provider_.embed(batch);
    if (vectors.size() != batch.size()) throw DataError("provider returned wrong number of vectors");
    const auto scores = score_batch(config_, vectors);
    std::map<std::string, double> by_head;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t h = 0; h < config_.heads.size(); ++h) {
        by_head[config_.heads[h].head.head_id] = scores[h][i];
      }
      const Decision d = decide(by_head, config_);
      for (std::size_t h = 0; h < d.passed.size(); ++h) {
        if (d.passed[h]) ++stats.per_head_pass_counts[config_.heads[h].head.head_id];
      }
      const std::uint64_t tokens = estimate_tokens(batch[i]);
      if (d.keep) {
        ++stats.docs_kept;
        stats.tokens_kept += tokens;
      } else {
        ++stats.docs_dropped;
        stats.tokens_dropped += tokens;
      }
      if (d.keep || options_.keep_rejects) {
        nlohmann::json j = document_to_json(batch[i]);
        j["scores"] = by_head;
        j["decision"] = d.keep ? "keep" : "drop";
        std::ofstream& out = d.keep ? kept : rejects;
        out << j.dump() << '\n';
      }
    }
    batch.clear();
  }

  EmbeddingProvider& provider_;
  const EnsembleConfig& config_;
  const PipelineOptions& options_;
};

void remove_quietly(const fs::path& p) {
  std::error_code ec;
  fs::remove(p, ec);
}

}  // namespace

PipelineResult run_pipeline(const std::vector<fs::path>& shards, EmbeddingProvider& provider,
                            const EnsembleConfig& config, const PipelineOptions& options) {
  config.validate();
  if (options.batch_size < 1) throw DataError("pipeline batch_size must be >= 1");
  if (provider.dim() > 0) {
    for (const auto& m : config.heads) {
      if (m.head.input_dim() != provider.dim()) throw DimensionMismatch(m.head.input_dim(), provider.dim());
    }
  }
  std::set<std::string> names;
  for (const auto& s : shards) {
    if (!names.insert(s.filename().string()).second) {
      throw DataError("two input shards share the name '" + s.filename().string() + "'");
    }
  }

  const auto start = std::chrono::steady_clock::now();
  PipelineResult result;
  if (shards.empty()) return result;

  for (const char* sub : {"kept", "rejects", "stats"}) {
    if (std::string(sub) == "rejects" && !options.keep_rejects) continue;
    std::error_code ec;
    fs::create_directories(options.out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (options.out_dir / sub).string() + ": " + ec.message());
  }

  struct Outcome {
    std::optional<FilterStats> stats;
    bool skipped = false;
    std::string error;
  };
  std::vector<Outcome> outcomes(shards.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    ShardProcessor processor(provider, config, options);
    for (std::size_t i = next++; i < shards.size(); i = next++) {
      const std::string name = shards[i].filename().string();
      const ShardPaths paths = shard_paths(options.out_dir, name);
      Outcome& out = outcomes[i];
      try {
        if (fs::exists(paths.done)) {
          out.stats = read_stats(paths.stats);
          out.skipped = true;
          continue;
        }
        FilterStats stats = processor.run(shards[i], paths);
        fs::rename(tmp_of(paths.kept), paths.kept);
        if (options.keep_rejects) fs::rename(tmp_of(paths.rejects), paths.rejects);
        write_file(tmp_of(paths.stats), nlohmann::json(stats).dump(2) + "\n");
        fs::rename(tmp_of(paths.stats), paths.stats);
        remove_quietly(paths.failed);
        write_file(paths.done, "");
        out.stats = std::move(stats);
      } catch (const std::exception& e) {
        out.error = e.what();
        remove_quietly(tmp_of(paths.kept));
        remove_quietly(tmp_of(paths.rejects));
        remove_quietly(tmp_of(paths.stats));
        try {
          write_file(paths.failed, out.error + "\n");
        } catch (const std::exception&) {
        }
      }
    }
  };

  const std::size_t n_workers = std::clamp<std::size_t>(options.workers, 1, shards.size());
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < shards.size(); ++i) {
    auto& o = outcomes[i];
    if (o.stats) {
      result.stats += *o.stats;
      (o.skipped ? result.shards_skipped : result.shards_processed)++;
    } else {
      result.failures.push_back({shards[i].string(), o.error});
    }
  }
  for (const auto& m : config.heads) result.stats.per_head_pass_counts.try_emplace(m.head.head_id, 0);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------

DistributionReport score_distribution_report(const std::map<std::string, std::vector<double>>& scores,
                                             const std::optional<std::vector<bool>>& kept) {
  if (scores.empty()) throw DataError("score report needs at least one head");
  DistributionReport report;
  for (const auto& [head_id, values] : scores) {
    if (values.empty()) throw DataError("no scores for head '" + head_id + "'");
    if (kept && kept->size() != values.size()) {
      throw DataError("partition size does not match scores for head '" + head_id + "'");
    }
    HeadDistribution d;
    d.head_id = head_id;
    d.count = values.size();
    d.min = *std::min_element(values.begin(), values.end());
    d.max = *std::max_element(values.begin(), values.end());
    d.degenerate = d.min == d.max;
    double sum = 0.0, sum_kept = 0.0, sum_removed = 0.0;
    std::uint64_t n_kept = 0, n_removed = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double v = values[i];
      if (!std::isfinite(v)) throw DataError("non-finite score for head '" + head_id + "'");
      sum += v;
      const int bin = v < 0.0 ? 0 : static_cast<int>(std::min(std::floor(v * 10.0), double(kHistogramBins - 1)));
      ++d.histogram[bin];
      if (kept) {
        if ((*kept)[i]) {
          sum_kept += v;
          ++n_kept;
        } else {
          sum_removed += v;
          ++n_removed;
        }
      }
    }
    d.mean = sum / static_cast<double>(d.count);
    if (n_kept) d.mean_kept = sum_kept / static_cast<double>(n_kept);
    if (n_removed) d.mean_removed = sum_removed / static_cast<double>(n_removed);
    report.heads.push_back(std::move(d));
  }
  for (auto a = scores.begin(); a != scores.end(); ++a) {
    for (auto b = std::next(a); b != scores.end(); ++b) {
      if (a->second.size() != b->second.size()) continue;
      PairwiseSpearman p{a->first, b->first, std::nullopt};
      const auto& da = *std::find_if(report.heads.begin(), report.heads.end(),
                                     [&](const auto& h) { return h.head_id == a->first; });
      const auto& db = *std::find_if(report.heads.begin(), report.heads.end(),
                                     [&](const auto& h) { return h.head_id == b->first; });
      if (!da.degenerate && !db.degenerate && a->second.size() >= 3) {
        p.rho = spearman(a->second, b->second);
      }
      report.pairwise.push_back(std::move(p));
    }
  }
  return report;
}

void to_json(nlohmann::json& j, const DistributionReport& r) {
  j = nlohmann::json::object();
  auto& heads = j["heads"] = nlohmann::json::object();
  for (const auto& d : r.heads) {
    nlohmann::json h = {{"count", d.count},
                        {"mean", d.mean},
                        {"min", d.min},
                        {"max", d.max},
                        {"degenerate", d.degenerate},
                        {"histogram", d.histogram},
                        {"bin_width", 0.1}};
    if (d.mean_kept) h["mean_kept"] = *d.mean_kept;
    if (d.mean_removed) h["mean_removed"] = *d.mean_removed;
    heads[d.head_id] = std::move(h);
  }
  auto& pairs = j["pairwise_spearman"] = nlohmann::json::array();
  for (const auto& p : r.pairwise) {
    nlohmann::json e = {{"a", p.head_a}, {"b", p.head_b}};
    if (p.rho) {
      e["spearman"] = *p.rho;
    } else {
      e["spearman"] = nullptr;
      e["degenerate"] = true;
    }
    pairs.push_back(std::move(e));
  }
}

}  // namespace qc

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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcurate/embeddings.hpp"
#include "qcurate/regressor.hpp"
#include "qcurate/thresholds.hpp"

namespace qc {

struct EnsembleMember {
  RegressionHead head;
  ThresholdSpec spec;
};

/// Heads that must all score a document strictly above their own threshold.
struct EnsembleConfig {
  std::vector<EnsembleMember> heads;

  /// Throws DataError if empty, if a head and its spec disagree on the id,
  /// or if ids repeat.
  void validate() const;
};

/// Pairs heads with specs by head id. Every head needs exactly one spec.
EnsembleConfig make_ensemble(std::vector<RegressionHead> heads,
                             const std::vector<ThresholdSpec>& specs);

struct Decision {
  bool keep = false;
  std::vector<bool> passed;  // one verdict per configured head, in order
};

/// Throws DataError when a configured head has no score.
Decision decide(const std::map<std::string, double>& scores, const EnsembleConfig& config);

struct FilterStats {
  std::uint64_t docs_in = 0;
  std::uint64_t docs_kept = 0;
  std::uint64_t docs_dropped = 0;
  std::uint64_t docs_errored = 0;
  std::uint64_t tokens_in = 0;
  std::uint64_t tokens_kept = 0;
  std::uint64_t tokens_dropped = 0;
  std::map<std::string, std::uint64_t> per_head_pass_counts;

  double retention_docs() const;
  double retention_tokens() const;

  FilterStats& operator+=(const FilterStats& o);
  bool operator==(const FilterStats&) const = default;
};

void to_json(nlohmann::json& j, const FilterStats& s);
void from_json(const nlohmann::json& j, FilterStats& s);

struct PipelineOptions {
  std::filesystem::path out_dir;
  bool keep_rejects = false;
  std::size_t workers = 1;
  std::size_t batch_size = 512;  // documents per embed/score round
  std::size_t max_record_bytes = 64u << 20;
};

struct ShardFailure {
  std::string shard;
  std::string error;
};

struct PipelineResult {
  FilterStats stats;  // completed shards only, including ones skipped as already done
  std::size_t shards_processed = 0;
  std::size_t shards_skipped = 0;
  std::vector<ShardFailure> failures;
  double seconds = 0.0;

  double docs_per_minute() const;
  double tokens_per_minute() const;
};

/// Output layout under out_dir, per input shard `name`:
///   kept/<name>          kept records with "scores" and "decision" added
///   rejects/<name>       dropped records, when keep_rejects is set
///   stats/<name>.json    the shard's FilterStats
///   <name>.done          zero-byte completion marker
///   <name>.failed        failure marker holding the error message
/// Shards with a completion marker are not reprocessed; their recorded stats
/// are folded into the totals.
PipelineResult run_pipeline(const std::vector<std::filesystem::path>& shards,
                            EmbeddingProvider& provider, const EnsembleConfig& config,
                            const PipelineOptions& options);

/// Scores one batch of embeddings with every head: result[h][i].
std::vector<std::vector<double>> score_batch(const EnsembleConfig& config,
                                             std::span<const EmbeddingVector> vectors);

// ---------------------------------------------------------------------------
// Score distributions

inline constexpr int kHistogramBins = 61;

struct HeadDistribution {
  std::string head_id;
  // bin i covers [i/10, (i+1)/10); bin 0 also takes values below 0 and the
  // last bin takes everything from 6.0 up
  std::array<std::uint64_t, kHistogramBins> histogram{};
  std::uint64_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  bool degenerate = false;  // all scores equal
  std::optional<double> mean_kept;
  std::optional<double> mean_removed;
};

struct PairwiseSpearman {
  std::string head_a;
  std::string head_b;
  std::optional<double> rho;  // empty when either side is degenerate
};

struct DistributionReport {
  std::vector<HeadDistribution> heads;
  std::vector<PairwiseSpearman> pairwise;
};

/// `kept`, when given, partitions documents (aligned with every score list)
/// into kept and removed for per-partition means. Score lists of equal length
/// are treated as aligned and get pairwise Spearman coefficients.
DistributionReport score_distribution_report(const std::map<std::string, std::vector<double>>& scores,
                                             const std::optional<std::vector<bool>>& kept = {});

void to_json(nlohmann::json& j, const DistributionReport& r);

}  // namespace qc

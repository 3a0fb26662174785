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
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace qc {

inline constexpr int kMinScore = 0;
inline constexpr int kMaxScore = 5;
inline constexpr int kNumScoreLevels = kMaxScore - kMinScore + 1;

/// A raw vote as it arrives from a teacher: either text or a JSON number.
using RawVote = std::variant<std::string, std::int64_t, double>;

struct ScoreVotes {
  std::string doc_id;
  std::vector<int> votes;
};

enum class AggregationMethod { kMajority, kMean };

const char* to_string(AggregationMethod m);
AggregationMethod aggregation_method_from_string(const std::string& s);

struct AggregatedLabel {
  std::string doc_id;
  double score = 0.0;
  AggregationMethod method = AggregationMethod::kMean;
  std::vector<int> votes;
};

struct AgreementReport {
  double majority_share = 0.0;
  double label_std = 0.0;
  // spread_cdf[s] = fraction of documents with max(votes) - min(votes) <= s
  std::array<double, kNumScoreLevels> spread_cdf{};
  std::uint64_t documents = 0;
};

/// Keeps the raw values that are integers in [0, 5], in order. An empty
/// result marks the record invalid.
std::vector<int> validate_votes(const std::vector<RawVote>& raw);
std::vector<int> validate_votes(const std::vector<std::string>& raw);

/// The unique modal vote if there is one, otherwise the arithmetic mean.
/// Throws DataError on empty input.
AggregatedLabel aggregate(const std::vector<int>& votes, std::string doc_id = {});

/// Throws DataError on an empty collection or a record without votes.
AgreementReport agreement_report(const std::vector<ScoreVotes>& labels);

struct BalancedSample {
  std::vector<std::string> doc_ids;
  // set when target_total exceeded the available supply
  bool short_supply = false;
};

/// Score bin used for balancing: round half away from zero, clamped to 0..5.
int score_bin(double score);

/// Draws up to `target_total` ids with bins filled round-robin so per-bin
/// counts are as even as supply allows. Exhausted bins drop out of the
/// rotation, which spreads their shortfall evenly over the rest.
BalancedSample balanced_sample(const std::vector<AggregatedLabel>& labels,
                               std::size_t target_total, std::uint64_t rng_seed);

// JSON-per-line codecs. Vote records: {"doc_id", "votes": [...]}.
// Label records: {"doc_id", "score", "method", "votes"}.
struct RawVoteRecord {
  std::string doc_id;
  std::vector<RawVote> votes;
};
RawVoteRecord raw_votes_from_json(const nlohmann::json& j);
nlohmann::json label_to_json(const AggregatedLabel& label);
AggregatedLabel label_from_json(const nlohmann::json& j);

}  // namespace qc

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

#include "qcurate/annotations.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>
#include <optional>

#include "qcurate/error.hpp"
#include "qcurate/random.hpp"

namespace qc {

const char* to_string(AggregationMethod m) {
  return m == AggregationMethod::kMajority ? "majority" : "mean";
}

AggregationMethod aggregation_method_from_string(const std::string& s) {
  if (s == "majority") return AggregationMethod::kMajority;
  if (s == "mean") return AggregationMethod::kMean;
  throw DataError("unknown aggregation method '" + s + "'");
}

namespace {

std::optional<int> parse_vote(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

bool in_range(std::int64_t v) { return v >= kMinScore && v <= kMaxScore; }

}  // namespace

std::vector<int> validate_votes(const std::vector<RawVote>& raw) {
  std::vector<int> out;
  for (const auto& r : raw) {
    if (auto* s = std::get_if<std::string>(&r)) {
      if (auto v = parse_vote(*s); v && in_range(*v)) out.push_back(*v);
    } else if (auto* i = std::get_if<std::int64_t>(&r)) {
      if (in_range(*i)) out.push_back(static_cast<int>(*i));
    } else {
      const double d = std::get<double>(r);
      if (std::isfinite(d) && d == std::floor(d) && d >= kMinScore && d <= kMaxScore) {
        out.push_back(static_cast<int>(d));
      }
    }
  }
  return out;
}

std::vector<int> validate_votes(const std::vector<std::string>& raw) {
  return validate_votes(std::vector<RawVote>(raw.begin(), raw.end()));
}

namespace {

std::array<int, kNumScoreLevels> histogram(const std::vector<int>& votes) {
  std::array<int, kNumScoreLevels> h{};
  for (int v : votes) {
    if (!in_range(v)) throw DataError("vote " + std::to_string(v) + " outside 0..5");
    ++h[v];
  }
  return h;
}

// Index of the unique most frequent value, or -1 when the top count is shared.
int unique_mode(const std::array<int, kNumScoreLevels>& h) {
  const int top = *std::max_element(h.begin(), h.end());
  if (std::count(h.begin(), h.end(), top) != 1) return -1;
  return static_cast<int>(std::find(h.begin(), h.end(), top) - h.begin());
}

}  // namespace

AggregatedLabel aggregate(const std::vector<int>& votes, std::string doc_id) {
  if (votes.empty()) throw DataError("aggregate: no valid votes for '" + doc_id + "'");
  const auto h = histogram(votes);
  AggregatedLabel out;
  out.doc_id = std::move(doc_id);
  out.votes = votes;
  if (int mode = unique_mode(h); mode >= 0) {
    out.score = mode;
    out.method = AggregationMethod::kMajority;
  } else {
    const long sum = std::accumulate(votes.begin(), votes.end(), 0L);
    out.score = static_cast<double>(sum) / static_cast<double>(votes.size());
    out.method = AggregationMethod::kMean;
  }
  return out;
}

AgreementReport agreement_report(const std::vector<ScoreVotes>& labels) {
  if (labels.empty()) throw DataError("empty dataset");
  AgreementReport r;
  r.documents = labels.size();
  std::array<std::uint64_t, kNumScoreLevels> spread_counts{};
  std::uint64_t majority = 0;
  double std_sum = 0.0;
  for (const auto& doc : labels) {
    if (doc.votes.empty()) throw DataError("record '" + doc.doc_id + "' has no valid votes");
    const auto h = histogram(doc.votes);
    if (unique_mode(h) >= 0) ++majority;
    const auto [lo, hi] = std::minmax_element(doc.votes.begin(), doc.votes.end());
    ++spread_counts[*hi - *lo];
    const double n = static_cast<double>(doc.votes.size());
    double mean = 0.0;
    for (int v : doc.votes) mean += v;
    mean /= n;
    double ss = 0.0;
    for (int v : doc.votes) ss += (v - mean) * (v - mean);
    std_sum += std::sqrt(ss / n);
  }
  const double n = static_cast<double>(labels.size());
  r.majority_share = static_cast<double>(majority) / n;
  r.label_std = std_sum / n;
  std::uint64_t cum = 0;
  for (int s = 0; s < kNumScoreLevels; ++s) {
    cum += spread_counts[s];
    r.spread_cdf[s] = static_cast<double>(cum) / n;
  }
  return r;
}

int score_bin(double score) {
  const double r = std::round(score);
  return static_cast<int>(std::clamp(r, double(kMinScore), double(kMaxScore)));
}

BalancedSample balanced_sample(const std::vector<AggregatedLabel>& labels,
                               std::size_t target_total, std::uint64_t rng_seed) {
  if (target_total < 1) throw DataError("balanced_sample: target_total must be >= 1");
  std::array<std::vector<std::string>, kNumScoreLevels> bins;
  for (const auto& l : labels) bins[score_bin(l.score)].push_back(l.doc_id);

  // Sort first so the draw depends only on the label set, not input order.
  Rng rng(rng_seed);
  for (auto& bin : bins) {
    std::sort(bin.begin(), bin.end());
    rng.shuffle(std::span<std::string>(bin));
  }

  BalancedSample out;
  out.short_supply = target_total > labels.size();
  const std::size_t want = std::min(target_total, labels.size());
  out.doc_ids.reserve(want);
  std::array<std::size_t, kNumScoreLevels> taken{};
  while (out.doc_ids.size() < want) {
    for (int b = 0; b < kNumScoreLevels && out.doc_ids.size() < want; ++b) {
      if (taken[b] < bins[b].size()) out.doc_ids.push_back(bins[b][taken[b]++]);
    }
  }
  return out;
}

RawVoteRecord raw_votes_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("vote record is not a JSON object");
  auto id = j.find("doc_id");
  if (id == j.end() || !id->is_string()) throw DataError("vote record needs string doc_id");
  auto votes = j.find("votes");
  if (votes == j.end() || !votes->is_array()) throw DataError("vote record needs votes array");
  RawVoteRecord rec;
  rec.doc_id = id->get<std::string>();
  for (const auto& v : *votes) {
    if (v.is_string()) {
      rec.votes.emplace_back(v.get<std::string>());
    } else if (v.is_number_integer()) {
      rec.votes.emplace_back(v.get<std::int64_t>());
    } else if (v.is_number_float()) {
      rec.votes.emplace_back(v.get<double>());
    } else {
      rec.votes.emplace_back(v.dump());  // kept so validation rejects it
    }
  }
  return rec;
}

nlohmann::json label_to_json(const AggregatedLabel& label) {
  return {{"doc_id", label.doc_id},
          {"score", label.score},
          {"method", to_string(label.method)},
          {"votes", label.votes}};
}

AggregatedLabel label_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("label record is not a JSON object");
  AggregatedLabel l;
  try {
    l.doc_id = j.at("doc_id").get<std::string>();
    l.score = j.at("score").get<double>();
    if (auto m = j.find("method"); m != j.end()) {
      l.method = aggregation_method_from_string(m->get<std::string>());
    }
    if (auto v = j.find("votes"); v != j.end()) l.votes = v->get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad label record: ") + e.what());
  }
  if (!std::isfinite(l.score)) throw DataError("label score must be finite");
  return l;
}

}  // namespace qc

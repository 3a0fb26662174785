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

#include "qcurate/thresholds.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>

#include "qcurate/error.hpp"

namespace qc {

namespace {

void check_p(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DataError("percentile must be in [0, 1]");
}

}  // namespace

double quantile_sorted(std::span<const double> v, double p) {
  check_p(p);
  if (v.empty()) throw DataError("quantile of an empty sample");
  const double h = static_cast<double>(v.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return v[lo];
  return std::clamp(v[lo] + frac * (v[lo + 1] - v[lo]), v[lo], v[lo + 1]);
}

double quantile(std::span<const double> values, double p) {
  check_p(p);
  if (values.empty()) throw DataError("quantile of an empty sample");
  if (!std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); })) {
    throw DataError("quantile: non-finite value in sample");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, p);
}

std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<ThresholdSpec> compute_thresholds(
    const std::map<std::string, std::vector<double>>& scores_per_head, double p) {
  check_p(p);
  const std::string stamp = utc_timestamp();
  std::vector<ThresholdSpec> out;
  for (const auto& [head_id, scores] : scores_per_head) {
    ThresholdSpec s;
    s.head_id = head_id;
    s.percentile = p;
    try {
      s.threshold_value = quantile(scores, p);
    } catch (const DataError& e) {
      throw DataError("head '" + head_id + "': " + e.what());
    }
    s.reference_sample_size = scores.size();
    s.computed_at = stamp;
    out.push_back(std::move(s));
  }
  return out;
}

void to_json(nlohmann::json& j, const ThresholdSpec& s) {
  j = {{"head_id", s.head_id},
       {"percentile", s.percentile},
       {"threshold_value", s.threshold_value},
       {"reference_sample_size", s.reference_sample_size},
       {"computed_at", s.computed_at}};
}

void from_json(const nlohmann::json& j, ThresholdSpec& s) {
  j.at("head_id").get_to(s.head_id);
  j.at("percentile").get_to(s.percentile);
  j.at("threshold_value").get_to(s.threshold_value);
  s.reference_sample_size = j.value("reference_sample_size", std::uint64_t{0});
  s.computed_at = j.value("computed_at", std::string{});
}

std::vector<ThresholdSpec> thresholds_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("threshold file must hold a JSON array");
  try {
    auto specs = j.get<std::vector<ThresholdSpec>>();
    for (const auto& s : specs) {
      check_p(s.percentile);
      if (!std::isfinite(s.threshold_value)) throw DataError("non-finite threshold for " + s.head_id);
    }
    return specs;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad threshold file: ") + e.what());
  }
}

}  // namespace qc

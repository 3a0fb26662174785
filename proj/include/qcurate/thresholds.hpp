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

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace qc {

struct ThresholdSpec {
  std::string head_id;
  double percentile = 0.0;
  double threshold_value = 0.0;
  std::uint64_t reference_sample_size = 0;
  std::string computed_at;  // ISO-8601 UTC
};

/// Linear interpolation between order statistics at h = (n - 1) p.
/// Throws DataError on empty input, non-finite values, or p outside [0, 1].
double quantile(std::span<const double> values, double p);

/// Same, for data already sorted ascending.
double quantile_sorted(std::span<const double> sorted, double p);

/// One spec per head at the shared percentile. Map keys are the grouping
/// key: a bare head id, or e.g. "head@lang" for per-language thresholds.
std::vector<ThresholdSpec> compute_thresholds(
    const std::map<std::string, std::vector<double>>& scores_per_head, double p);

std::string utc_timestamp();

void to_json(nlohmann::json& j, const ThresholdSpec& s);
void from_json(const nlohmann::json& j, ThresholdSpec& s);

/// Threshold files hold a JSON array of specs.
std::vector<ThresholdSpec> thresholds_from_json(const nlohmann::json& j);

}  // namespace qc

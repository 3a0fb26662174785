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
#include <span>
#include <vector>

#include <Eigen/Core>

#include "qcurate/annotations.hpp"

namespace qc {

/// Average (fractional) ranks, 1-based. Ties share the mean of their positions.
template <typename Scalar>
Eigen::VectorXd average_ranks(std::span<const Scalar> values);

/// Spearman's rho as the Pearson correlation of average ranks.
/// Throws DataError when the lengths differ, n < 3, a value is not finite, or
/// either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

/// Two-sided p-value of Student's t with n - 2 degrees of freedom at
/// t = rho * sqrt((n - 2) / (1 - rho^2)). Throws DataError for n < 4.
double spearman_pvalue(double rho, std::uint64_t n);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

/// Two-sided tail P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided(double t, double dof);

struct ConfusionMatrix {
  // counts(true, predicted)
  Eigen::Matrix<std::uint64_t, kNumScoreLevels, kNumScoreLevels> counts =
      Eigen::Matrix<std::uint64_t, kNumScoreLevels, kNumScoreLevels>::Zero();

  std::uint64_t total() const { return counts.sum(); }
};

ConfusionMatrix confusion(std::span<const int> true_labels, std::span<const int> pred_labels);

/// Mean per-class F1 over the classes that occur in `true_labels`.
double macro_f1(std::span<const int> true_labels, std::span<const int> pred_labels);

/// Rounds a real score to its 0..5 class (half away from zero, clamped).
int score_class(double score);

}  // namespace qc

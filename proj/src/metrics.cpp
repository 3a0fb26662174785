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

#include "qcurate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "qcurate/error.hpp"

namespace qc {

template <typename Scalar>
Eigen::VectorXd average_ranks(std::span<const Scalar> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  Eigen::VectorXd ranks(static_cast<Eigen::Index>(n));
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 (0-based) share rank mean((i+1)..j)
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[static_cast<Eigen::Index>(order[k])] = r;
    i = j;
  }
  return ranks;
}

template Eigen::VectorXd average_ranks<double>(std::span<const double>);
template Eigen::VectorXd average_ranks<float>(std::span<const float>);
template Eigen::VectorXd average_ranks<int>(std::span<const int>);

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("spearman: length mismatch");
  if (x.size() < 3) throw DataError("spearman: need at least 3 pairs");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(x.begin(), x.end(), finite) || !std::all_of(y.begin(), y.end(), finite)) {
    throw DataError("spearman: non-finite value");
  }
  Eigen::VectorXd rx = average_ranks(x);
  Eigen::VectorXd ry = average_ranks(y);
  rx.array() -= rx.mean();
  ry.array() -= ry.mean();
  const double sxx = rx.squaredNorm();
  const double syy = ry.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) throw DataError("spearman: undefined for constant input");
  const double rho = rx.dot(ry) / std::sqrt(sxx * syy);
  return std::clamp(rho, -1.0, 1.0);
}

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw DataError("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DataError("incomplete_beta: a and b must be positive");
  if (x < 0.0 || x > 1.0 || std::isnan(x)) throw DataError("incomplete_beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fastest for x < (a + 1) / (a + b + 2); use the
  // symmetry I_x(a, b) = 1 - I_{1-x}(b, a) on the other side.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (!(dof > 0.0)) throw DataError("student_t: degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) throw DataError("student_t: t is NaN");
  const double x = dof / (dof + t * t);
  return std::clamp(incomplete_beta(0.5 * dof, 0.5, x), 0.0, 1.0);
}

double spearman_pvalue(double rho, std::uint64_t n) {
  if (n < 4) throw DataError("spearman_pvalue: need n >= 4");
  if (!(std::fabs(rho) <= 1.0)) throw DataError("spearman_pvalue: |rho| must be <= 1");
  if (std::fabs(rho) == 1.0) return 0.0;
  const double dof = static_cast<double>(n - 2);
  const double t = rho * std::sqrt(dof / ((1.0 - rho) * (1.0 + rho)));
  return student_t_two_sided(t, dof);
}

namespace {

void check_labels(std::span<const int> labels) {
  for (int l : labels) {
    if (l < kMinScore || l > kMaxScore) {
      throw DataError("label " + std::to_string(l) + " outside 0..5");
    }
  }
}

}  // namespace

ConfusionMatrix confusion(std::span<const int> true_labels, std::span<const int> pred_labels) {
  if (true_labels.size() != pred_labels.size()) throw DataError("confusion: length mismatch");
  check_labels(true_labels);
  check_labels(pred_labels);
  ConfusionMatrix m;
  for (std::size_t i = 0; i < true_labels.size(); ++i) ++m.counts(true_labels[i], pred_labels[i]);
  return m;
}

double macro_f1(std::span<const int> true_labels, std::span<const int> pred_labels) {
  if (true_labels.size() != pred_labels.size()) throw DataError("macro_f1: length mismatch");
  if (true_labels.empty()) throw DataError("macro_f1: no labels");
  const ConfusionMatrix m = confusion(true_labels, pred_labels);
  const auto support = m.counts.rowwise().sum();
  const auto predicted = m.counts.colwise().sum();
  double sum = 0.0;
  int classes = 0;
  for (int c = 0; c < kNumScoreLevels; ++c) {
    if (support(c) == 0) continue;
    ++classes;
    const double tp = static_cast<double>(m.counts(c, c));
    if (tp == 0.0) continue;
    const double precision = tp / static_cast<double>(predicted(c));
    const double recall = tp / static_cast<double>(support(c));
    sum += 2.0 * precision * recall / (precision + recall);
  }
  return sum / classes;
}

int score_class(double score) { return score_bin(score); }

}  // namespace qc

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

// Independent reference implementations used only by tests. None of these
// share code paths with the library routines they check.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "qcurate/regressor.hpp"

namespace qc::testing {

// O(n^2) average ranks by counting, then a textbook two-pass Pearson.
inline double brute_force_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      double less = 0, equal = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (v[j] < v[i]) less += 1;
        if (v[j] == v[i]) equal += 1;
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Tie-free closed form 1 - 6 sum d^2 / (n (n^2 - 1)), ranks by counting.
inline double closed_form_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double d2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double rx = 1, ry = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (x[j] < x[i]) rx += 1;
      if (y[j] < y[i]) ry += 1;
    }
    d2 += (rx - ry) * (rx - ry);
  }
  const double nn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

struct ModeMeanResult {
  double score;
  bool majority;
};

// Modal vote if strictly more frequent than every other value, else the mean.
inline ModeMeanResult brute_force_aggregate(const std::vector<int>& votes) {
  int best_value = -1, best_count = 0;
  bool tie = false;
  for (int v = 0; v <= 5; ++v) {
    int c = 0;
    for (int x : votes) c += (x == v);
    if (c > best_count) {
      best_count = c;
      best_value = v;
      tie = false;
    } else if (c == best_count && c > 0) {
      tie = true;
    }
  }
  if (!tie) return {static_cast<double>(best_value), true};
  double s = 0;
  for (int x : votes) s += x;
  return {s / votes.size(), false};
}

// Plain-loop forward pass in double, independent of the Eigen expression path.
inline double scalar_forward(const MlpHead<double>& h, const Eigen::VectorXd& x) {
  double out = h.b2;
  for (int j = 0; j < h.hidden_dim(); ++j) {
    double z = h.b1[j];
    for (int k = 0; k < h.input_dim(); ++k) z += h.w1(j, k) * x[k];
    if (z > 0) out += h.w2[j] * z;
  }
  return out;
}

inline double scalar_batch_mse(const MlpHead<double>& h, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  double s = 0;
  for (int i = 0; i < x.cols(); ++i) {
    const double r = scalar_forward(h, x.col(i)) - y[i];
    s += r * r;
  }
  return s / x.cols();
}

// Central differences with step h on every parameter; returns the largest
// relative error |a - f| / max(|a| + |f|, floor) against analytic gradients.
inline double max_fd_relative_error(MlpHead<double> head, const Eigen::MatrixXd& x,
                                    const Eigen::VectorXd& y, const Gradients<double>& g,
                                    double h = 1e-4, double floor = 1e-6) {
  double worst = 0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = scalar_batch_mse(head, x, y);
    param = saved - h;
    const double down = scalar_batch_mse(head, x, y);
    param = saved;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(analytic - fd) / std::max(std::abs(analytic) + std::abs(fd), floor);
    worst = std::max(worst, rel);
  };
  for (int r = 0; r < head.w1.rows(); ++r)
    for (int c = 0; c < head.w1.cols(); ++c) check(head.w1(r, c), g.w1(r, c));
  for (int i = 0; i < head.b1.size(); ++i) check(head.b1[i], g.b1[i]);
  for (int i = 0; i < head.w2.size(); ++i) check(head.w2[i], g.w2[i]);
  check(head.b2, g.b2);
  return worst;
}

// Random head whose hidden pre-activations stay away from the ReLU kink, so
// central differences are valid at every parameter.
inline MlpHead<double> random_smooth_head(std::mt19937_64& rng, int in, int hidden,
                                          const Eigen::MatrixXd& x, double margin = 1e-3) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (;;) {
    auto h = MlpHead<double>::zeros(in, hidden);
    for (int r = 0; r < hidden; ++r) {
      for (int c = 0; c < in; ++c) h.w1(r, c) = nd(rng);
      h.b1[r] = nd(rng);
      h.w2[r] = nd(rng);
    }
    h.b2 = nd(rng);
    const Eigen::MatrixXd pre = (h.w1 * x).colwise() + h.b1;
    if ((pre.array().abs() > margin).all()) return h;
  }
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("qcurate_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace qc::testing

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

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "qcurate/annotations.hpp"
#include "qcurate/corpus.hpp"
#include "qcurate/embeddings.hpp"
#include "qcurate/regressor.hpp"

namespace qc::testing {

struct TeacherFixture {
  std::vector<EmbeddingVector> vectors;
  std::vector<AggregatedLabel> labels;
  TrainingSet set;
};

// Mock embeddings with a noisy linear teacher:
//   label = clip(2.5 + 10 * (w . x) + N(0, 0.1), 0, 5),  |w| = 1.
// For unit-norm x in 64 dims, 10 * (w . x) has standard deviation ~1.25, so
// labels spread over the whole 0..5 range with little clipping.
inline TeacherFixture make_teacher_fixture(std::size_t n = 10'000, int dim = 64,
                                           std::uint64_t seed = 42) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd w(dim);
  for (int i = 0; i < dim; ++i) w[i] = nd(rng);
  w.normalize();

  TeacherFixture f;
  f.set.x.resize(dim, static_cast<Eigen::Index>(n));
  f.set.y.resize(static_cast<Eigen::Index>(n));
  f.set.backbone_id = "mock-d" + std::to_string(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "doc-" + std::to_string(i);
    const Eigen::VectorXf x = mock_embed("synthetic document " + std::to_string(i), dim, seed);
    const double label = std::clamp(2.5 + 10.0 * w.dot(x.cast<double>()) + 0.1 * nd(rng), 0.0, 5.0);
    f.vectors.push_back({id, f.set.backbone_id, x});
    f.labels.push_back({id, label, AggregationMethod::kMean, {}});
    f.set.x.col(static_cast<Eigen::Index>(i)) = x;
    f.set.y[static_cast<Eigen::Index>(i)] = label;
    f.set.doc_ids.push_back(id);
  }
  return f;
}

// score = scale * x[component], exactly: relu(x) - relu(-x) on one coordinate.
inline RegressionHead projection_head(const std::string& head_id, int dim, int component,
                                      float scale = 1.0f) {
  auto h = RegressionHead::zeros(dim, 2);
  h.w1(0, component) = scale;
  h.w1(1, component) = -scale;
  h.w2 << 1.0f, -1.0f;
  h.head_id = head_id;
  h.backbone_id = "mock-d" + std::to_string(dim) + "-s0";
  return h;
}

// Documents with distinct texts of roughly `chars` characters each.
inline std::vector<Document> make_documents(const std::string& prefix, std::size_t n,
                                            std::size_t chars = 80) {
  std::vector<Document> docs;
  docs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Document d;
    d.id = prefix + "-" + std::to_string(i);
    d.text = "Document " + d.id + ":";
    while (d.text.size() < chars) d.text += " lorem ipsum dolor sit amet";
    d.lang = i % 3 == 0 ? "de" : "en";
    docs.push_back(std::move(d));
  }
  return docs;
}

inline void write_shard(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& d : docs) out << serialize_document(d) << '\n';
}

}  // namespace qc::testing

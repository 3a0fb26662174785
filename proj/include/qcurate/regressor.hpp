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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "qcurate/annotations.hpp"
#include "qcurate/embeddings.hpp"
#include "qcurate/error.hpp"

namespace qc {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct TrainConfig {
  int hidden_dim = 1000;
  double lr_peak = 5e-4;
  double lr_min = 0.0;
  std::size_t batch_size = 1024;
  int max_epochs = 20;
  double val_fraction = 0.10;
  double early_stop_delta = 1e-3;
  int early_stop_patience = 5;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  /// Throws DataError on an inconsistent configuration.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their current values; unknown keys are rejected.
void merge_json(TrainConfig& c, const nlohmann::json& j);

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_spearman = 0.0;
  std::string label_source;
  bool restored_best = true;
  nlohmann::json config = nlohmann::json::object();

  bool operator==(const TrainingMeta&) const = default;
};

/// Scoring head: score = w2 . relu(w1 x + b1) + b2.
template <typename Scalar>
struct MlpHead {
  MatrixX<Scalar> w1;   // hidden x input
  VectorX<Scalar> b1;   // hidden
  RowVectorX<Scalar> w2;  // 1 x hidden
  Scalar b2 = 0;

  std::string head_id;
  std::string backbone_id;
  TrainingMeta meta;

  static MlpHead zeros(int input_dim, int hidden_dim) {
    MlpHead h;
    h.w1 = MatrixX<Scalar>::Zero(hidden_dim, input_dim);
    h.b1 = VectorX<Scalar>::Zero(hidden_dim);
    h.w2 = RowVectorX<Scalar>::Zero(hidden_dim);
    return h;
  }

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  std::uint64_t parameter_count() const {
    return static_cast<std::uint64_t>(w1.size() + b1.size() + w2.size() + 1);
  }
  bool all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && std::isfinite(b2);
  }

  template <typename To>
  MlpHead<To> cast() const {
    MlpHead<To> h;
    h.w1 = w1.template cast<To>();
    h.b1 = b1.template cast<To>();
    h.w2 = w2.template cast<To>();
    h.b2 = static_cast<To>(b2);
    h.head_id = head_id;
    h.backbone_id = backbone_id;
    h.meta = meta;
    return h;
  }
};

/// The persisted, inference-side head: binary32 weights.
using RegressionHead = MlpHead<float>;

/// He-normal hidden layer (variance 2 / input_dim), output layer with
/// variance 1 / hidden_dim, zero biases.
template <typename Scalar>
MlpHead<Scalar> init_head(int input_dim, int hidden_dim, std::uint64_t seed);

template <typename Scalar, typename Derived>
Scalar forward(const MlpHead<Scalar>& head, const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != head.input_dim()) throw DimensionMismatch(head.input_dim(), x.size());
  const VectorX<Scalar> hidden = (head.w1 * x + head.b1).cwiseMax(Scalar(0));
  return head.w2.dot(hidden) + head.b2;
}

/// Scores for the columns of `x` (input_dim x n).
template <typename Scalar, typename Derived>
RowVectorX<Scalar> forward_batch(const MlpHead<Scalar>& head, const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() != head.input_dim()) throw DimensionMismatch(head.input_dim(), x.rows());
  const MatrixX<Scalar> hidden = ((head.w1 * x).colwise() + head.b1).cwiseMax(Scalar(0));
  return (head.w2 * hidden).array() + head.b2;
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar mse_loss(const Eigen::DenseBase<DerivedA>& preds,
                                   const Eigen::DenseBase<DerivedB>& targets) {
  if (preds.size() != targets.size()) throw DataError("mse_loss: length mismatch");
  if (preds.size() == 0) throw DataError("mse_loss: empty input");
  return (preds.derived().array() - targets.derived().array()).square().mean();
}

inline double mse_loss(std::span<const double> preds, std::span<const double> targets) {
  using Map = Eigen::Map<const Eigen::ArrayXd>;
  return mse_loss(Map(preds.data(), static_cast<Eigen::Index>(preds.size())),
                  Map(targets.data(), static_cast<Eigen::Index>(targets.size())));
}

template <typename Scalar>
struct Gradients {
  MatrixX<Scalar> w1;
  VectorX<Scalar> b1;
  RowVectorX<Scalar> w2;
  Scalar b2 = 0;
  Scalar loss = 0;  // mse at the evaluated parameters
};

/// Analytic gradients of mse_loss(forward_batch(head, x), targets) for the
/// batch in the columns of `x`. The ReLU derivative at 0 is taken as 0.
template <typename Scalar, typename DerivedX, typename DerivedY>
Gradients<Scalar> backward(const MlpHead<Scalar>& head, const Eigen::MatrixBase<DerivedX>& x,
                           const Eigen::MatrixBase<DerivedY>& targets) {
  if (x.rows() != head.input_dim()) throw DimensionMismatch(head.input_dim(), x.rows());
  if (targets.size() != x.cols()) throw DataError("backward: batch/target size mismatch");
  if (x.cols() == 0) throw DataError("backward: empty batch");
  const Scalar n = static_cast<Scalar>(x.cols());
  const MatrixX<Scalar> pre = (head.w1 * x).colwise() + head.b1;
  const MatrixX<Scalar> act = pre.cwiseMax(Scalar(0));
  const RowVectorX<Scalar> residual =
      ((head.w2 * act).array() + head.b2).matrix() - targets.derived().reshaped().transpose();
  const RowVectorX<Scalar> d_out = (Scalar(2) / n) * residual;

  Gradients<Scalar> g;
  g.loss = residual.squaredNorm() / n;
  g.w2 = d_out * act.transpose();
  g.b2 = d_out.sum();
  const MatrixX<Scalar> d_pre =
      ((head.w2.transpose() * d_out).array() * (pre.array() > Scalar(0)).template cast<Scalar>())
          .matrix();
  g.w1 = d_pre * x.transpose();
  g.b1 = d_pre.rowwise().sum();
  return g;
}

template <typename Scalar>
struct AdamState {
  Gradients<Scalar> m;
  Gradients<Scalar> v;

  static AdamState zeros_like(const MlpHead<Scalar>& head) {
    AdamState s;
    for (Gradients<Scalar>* g : {&s.m, &s.v}) {
      g->w1 = MatrixX<Scalar>::Zero(head.w1.rows(), head.w1.cols());
      g->b1 = VectorX<Scalar>::Zero(head.b1.size());
      g->w2 = RowVectorX<Scalar>::Zero(head.w2.size());
      g->b2 = 0;
    }
    return s;
  }
};

/// One AdamW update: decoupled decay p -= lr * wd * p, then the
/// bias-corrected Adam step. `step_index` is 1-based.
template <typename Scalar>
void adamw_step(MlpHead<Scalar>& head, const Gradients<Scalar>& grads, AdamState<Scalar>& state,
                std::uint64_t step_index, double lr, const TrainConfig& config) {
  if (step_index < 1) throw DataError("adamw_step: step_index must be >= 1");
  const Scalar b1 = static_cast<Scalar>(config.adam_beta1);
  const Scalar b2 = static_cast<Scalar>(config.adam_beta2);
  const Scalar eps = static_cast<Scalar>(config.adam_eps);
  const Scalar lr_s = static_cast<Scalar>(lr);
  const Scalar decay = Scalar(1) - static_cast<Scalar>(lr * config.weight_decay);
  const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(config.adam_beta1, double(step_index)));
  const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(config.adam_beta2, double(step_index)));

  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    p *= decay;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
    p.array() -= lr_s * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  update(head.w1, grads.w1, state.m.w1, state.v.w1);
  update(head.b1, grads.b1, state.m.b1, state.v.b1);
  update(head.w2, grads.w2, state.m.w2, state.v.w2);

  head.b2 *= decay;
  state.m.b2 = b1 * state.m.b2 + (Scalar(1) - b1) * grads.b2;
  state.v.b2 = b2 * state.v.b2 + (Scalar(1) - b2) * grads.b2 * grads.b2;
  head.b2 -= lr_s * (state.m.b2 / c1) / (std::sqrt(state.v.b2 / c2) + eps);
}

/// Cosine annealing without warmup.
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_peak,
                        double lr_min) {
  if (total_steps < 1) throw DataError("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) throw DataError("cosine_lr: step beyond total_steps");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_peak - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_spearman = 0.0;
  double lr = 0.0;  // rate used by the epoch's first step
};

struct TrainHistory {
  double initial_train_loss = 0.0;
  std::vector<EpochRecord> epochs;
};

/// Embeddings as columns (input_dim x n) with aligned targets.
struct TrainingSet {
  Eigen::MatrixXf x;
  Eigen::VectorXd y;
  std::vector<std::string> doc_ids;
  std::string backbone_id;
};

class MissingEmbeddings : public DataError {
 public:
  explicit MissingEmbeddings(std::vector<std::string> ids);
  const std::vector<std::string>& doc_ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

/// Resolves every label in the store. Throws MissingEmbeddings listing all
/// ids that are absent.
TrainingSet assemble_training_set(const EmbeddingStore& store,
                                  const std::vector<AggregatedLabel>& labels);

/// Validation score for an epoch; the default computes Spearman between the
/// head's predictions and the validation targets.
using ValidationScorer = std::function<double(int epoch, const MlpHead<double>& head,
                                              const Eigen::MatrixXd& x_val,
                                              const Eigen::VectorXd& y_val)>;

struct TrainResult {
  RegressionHead head;
  TrainHistory history;
};

/// Seeded shuffle, last val_fraction held out, minibatch AdamW with a
/// per-step cosine schedule, early stopping on validation Spearman. The
/// output bias starts at the mean training label.
/// Returns the weights from the best epoch, where an epoch only counts as a
/// new best if it beats the previous best by at least early_stop_delta.
TrainResult train(const TrainingSet& data, const TrainConfig& config,
                  const ValidationScorer& scorer = {});
TrainResult train(const EmbeddingStore& store, const std::vector<AggregatedLabel>& labels,
                  const TrainConfig& config);

std::vector<float> predict_batch(const RegressionHead& head,
                                 std::span<const EmbeddingVector> vectors);

// ---------------------------------------------------------------------------
// Head files: JSON envelope with weights as one base64 blob of binary32 LE
// values in the order w1 (row-major), b1, w2, b2.

inline constexpr int kHeadFormatVersion = 1;

nlohmann::json head_to_json(const RegressionHead& head);
RegressionHead head_from_json(const nlohmann::json& j);
std::string head_serialize(const RegressionHead& head);
void head_save(const std::filesystem::path& path, const RegressionHead& head);
RegressionHead head_load(const std::filesystem::path& path);

}  // namespace qc

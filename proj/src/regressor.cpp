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

#include "qcurate/regressor.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "base64.hpp"
#include "qcurate/metrics.hpp"
#include "qcurate/random.hpp"

namespace qc {

void TrainConfig::validate() const {
  if (hidden_dim < 1) throw DataError("hidden_dim must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw DataError("val_fraction must be in (0, 1)");
  if (batch_size < 1) throw DataError("batch_size must be >= 1");
  if (max_epochs < 1) throw DataError("max_epochs must be >= 1");
  if (!(lr_min <= lr_peak)) throw DataError("lr_min must not exceed lr_peak");
  if (lr_min < 0.0) throw DataError("learning rates must be non-negative");
  if (early_stop_patience < 1) throw DataError("early_stop_patience must be >= 1");
  if (weight_decay < 0.0) throw DataError("weight_decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw DataError("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw DataError("adam_eps must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"hidden_dim", c.hidden_dim},
       {"lr_peak", c.lr_peak},
       {"lr_min", c.lr_min},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"val_fraction", c.val_fraction},
       {"early_stop_delta", c.early_stop_delta},
       {"early_stop_patience", c.early_stop_patience},
       {"weight_decay", c.weight_decay},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"seed", c.seed}};
}

void merge_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("train config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "hidden_dim") c.hidden_dim = v.get<int>();
      else if (k == "lr_peak") c.lr_peak = v.get<double>();
      else if (k == "lr_min") c.lr_min = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "max_epochs") c.max_epochs = v.get<int>();
      else if (k == "val_fraction") c.val_fraction = v.get<double>();
      else if (k == "early_stop_delta") c.early_stop_delta = v.get<double>();
      else if (k == "early_stop_patience") c.early_stop_patience = v.get<int>();
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "adam_beta1") c.adam_beta1 = v.get<double>();
      else if (k == "adam_beta2") c.adam_beta2 = v.get<double>();
      else if (k == "adam_eps") c.adam_eps = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw DataError("unknown train config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad train config: ") + e.what());
  }
}

template <typename Scalar>
MlpHead<Scalar> init_head(int input_dim, int hidden_dim, std::uint64_t seed) {
  if (input_dim < 1 || hidden_dim < 1) throw DataError("head dimensions must be >= 1");
  auto h = MlpHead<Scalar>::zeros(input_dim, hidden_dim);
  Rng rng(seed ^ 0x5eedf00dcafe1234ULL);
  const double s1 = std::sqrt(2.0 / input_dim);
  const double s2 = std::sqrt(1.0 / hidden_dim);
  // row-major fill so the draw order is independent of storage order
  for (int r = 0; r < hidden_dim; ++r) {
    for (int c = 0; c < input_dim; ++c) h.w1(r, c) = static_cast<Scalar>(s1 * rng.normal());
  }
  for (int r = 0; r < hidden_dim; ++r) h.w2[r] = static_cast<Scalar>(s2 * rng.normal());
  return h;
}

template MlpHead<float> init_head<float>(int, int, std::uint64_t);
template MlpHead<double> init_head<double>(int, int, std::uint64_t);

MissingEmbeddings::MissingEmbeddings(std::vector<std::string> ids)
    : DataError([&] {
        std::string msg = std::to_string(ids.size()) + " labeled id(s) missing from store:";
        const std::size_t shown = std::min<std::size_t>(ids.size(), 20);
        for (std::size_t i = 0; i < shown; ++i) msg += " " + ids[i];
        if (shown < ids.size()) msg += " ...";
        return msg;
      }()),
      ids_(std::move(ids)) {}

TrainingSet assemble_training_set(const EmbeddingStore& store,
                                  const std::vector<AggregatedLabel>& labels) {
  std::vector<std::string> missing;
  for (const auto& l : labels) {
    if (!store.contains(l.doc_id)) missing.push_back(l.doc_id);
  }
  if (!missing.empty()) throw MissingEmbeddings(std::move(missing));
  TrainingSet set;
  set.backbone_id = store.backbone_id();
  set.x.resize(store.dim(), static_cast<Eigen::Index>(labels.size()));
  set.y.resize(static_cast<Eigen::Index>(labels.size()));
  set.doc_ids.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = store.get(labels[i].doc_id);
    set.x.col(static_cast<Eigen::Index>(i)) = v->values;
    set.y[static_cast<Eigen::Index>(i)] = labels[i].score;
    set.doc_ids.push_back(labels[i].doc_id);
  }
  return set;
}

namespace {

Eigen::MatrixXd gather_columns(const Eigen::MatrixXf& x, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = x.col(static_cast<Eigen::Index>(idx[i])).cast<double>();
  }
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& y, std::span<const std::size_t> idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(idx[i])];
  return out;
}

bool is_constant(const Eigen::VectorXd& v) {
  return v.size() == 0 || (v.array() == v[0]).all();
}

double dataset_mse(const MlpHead<double>& head, const Eigen::MatrixXf& x,
                   std::span<const std::size_t> idx, const Eigen::VectorXd& y, std::size_t chunk) {
  double sum = 0.0;
  for (std::size_t lo = 0; lo < idx.size(); lo += chunk) {
    const auto part = idx.subspan(lo, std::min(chunk, idx.size() - lo));
    const Eigen::MatrixXd xb = gather_columns(x, part);
    const Eigen::RowVectorXd preds = forward_batch(head, xb);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const double r = preds[static_cast<Eigen::Index>(i)] - y[static_cast<Eigen::Index>(part[i])];
      sum += r * r;
    }
  }
  return sum / static_cast<double>(idx.size());
}

double default_validation(int, const MlpHead<double>& head, const Eigen::MatrixXd& x_val,
                          const Eigen::VectorXd& y_val) {
  const Eigen::RowVectorXd preds = forward_batch(head, x_val);
  // A head that scores every document the same ranks nothing.
  if ((preds.array() == preds[0]).all()) return 0.0;
  return spearman(std::span<const double>(preds.data(), static_cast<std::size_t>(preds.size())),
                  std::span<const double>(y_val.data(), static_cast<std::size_t>(y_val.size())));
}

}  // namespace

TrainResult train(const TrainingSet& data, const TrainConfig& config,
                  const ValidationScorer& scorer) {
  config.validate();
  const std::size_t n = static_cast<std::size_t>(data.y.size());
  if (static_cast<std::size_t>(data.x.cols()) != n) throw DataError("train: x/y size mismatch");
  const auto min_docs = static_cast<std::size_t>(std::ceil(2.0 / config.val_fraction - 1e-9));
  if (n < std::max<std::size_t>(min_docs, 4)) {
    throw DataError("train: need at least " + std::to_string(std::max<std::size_t>(min_docs, 4)) +
                    " labeled documents, got " + std::to_string(n));
  }
  if (is_constant(data.y)) throw DataError("train: labels are constant, Spearman is undefined");
  if (!data.x.allFinite() || !data.y.allFinite()) throw DataError("train: non-finite input");

  // Seeded split: last val_fraction of a shuffled order is held out.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(config.seed);
  split_rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * config.val_fraction + 1e-9)), 3,
      n - 1);
  const std::size_t n_train = n - n_val;
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::span<const std::size_t> val_idx(order.data() + n_train, n_val);
  const Eigen::MatrixXd x_val = gather_columns(data.x, val_idx);
  const Eigen::VectorXd y_val = gather(data.y, val_idx);
  if (is_constant(y_val)) throw DataError("train: validation labels are constant, Spearman is undefined");

  MlpHead<double> head = init_head<double>(static_cast<int>(data.x.rows()), config.hidden_dim, config.seed);
  head.backbone_id = data.backbone_id;
  head.b2 = gather(data.y, train_idx).mean();
  auto state = AdamState<double>::zeros_like(head);

  const std::size_t steps_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total_steps = static_cast<std::uint64_t>(config.max_epochs) * steps_per_epoch;

  TrainHistory history;
  history.initial_train_loss = dataset_mse(head, data.x, train_idx, data.y, config.batch_size);

  Rng batch_rng(config.seed + 0x9e3779b97f4a7c15ULL);
  std::uint64_t step = 0;
  MlpHead<double> best = head;
  double best_score = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stale = 0;
  const auto& evaluate = scorer ? scorer : ValidationScorer(default_validation);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    batch_rng.shuffle(std::span<std::size_t>(train_idx));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(step, total_steps, config.lr_peak, config.lr_min);
    for (std::size_t lo = 0; lo < n_train; lo += config.batch_size) {
      const std::span<const std::size_t> part(train_idx.data() + lo,
                                              std::min(config.batch_size, n_train - lo));
      const Eigen::MatrixXd xb = gather_columns(data.x, part);
      const Eigen::VectorXd yb = gather(data.y, part);
      const double lr = cosine_lr(step, total_steps, config.lr_peak, config.lr_min);
      const auto grads = backward(head, xb, yb);
      ++step;
      adamw_step(head, grads, state, step, lr, config);
    }
    rec.train_loss = dataset_mse(head, data.x, train_idx, data.y, config.batch_size);
    rec.val_spearman = evaluate(epoch, head, x_val, y_val);
    history.epochs.push_back(rec);

    if (!head.all_finite()) throw DataError("train: parameters diverged to non-finite values");
    if (rec.val_spearman >= best_score + config.early_stop_delta) {
      best_score = rec.val_spearman;
      best = head;
      best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.early_stop_patience) {
      break;
    }
  }

  best.meta.seed = config.seed;
  best.meta.epochs_run = static_cast<int>(history.epochs.size());
  best.meta.best_epoch = best_epoch;
  best.meta.best_val_spearman = best_score;
  best.meta.restored_best = true;
  best.meta.label_source = "aggregated";
  best.meta.config = config;
  return {best.cast<float>(), std::move(history)};
}

TrainResult train(const EmbeddingStore& store, const std::vector<AggregatedLabel>& labels,
                  const TrainConfig& config) {
  return train(assemble_training_set(store, labels), config);
}

std::vector<float> predict_batch(const RegressionHead& head,
                                 std::span<const EmbeddingVector> vectors) {
  Eigen::MatrixXf x(head.input_dim(), static_cast<Eigen::Index>(vectors.size()));
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].values.size() != head.input_dim()) {
      throw DimensionMismatch(head.input_dim(), vectors[i].values.size());
    }
    x.col(static_cast<Eigen::Index>(i)) = vectors[i].values;
  }
  if (vectors.empty()) return {};
  const Eigen::RowVectorXf scores = forward_batch(head, x);
  return {scores.data(), scores.data() + scores.size()};
}

// ---------------------------------------------------------------------------
// Head files

namespace {

void append_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float read_f32(const std::string& bytes, std::size_t& pos) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  pos += 4;
  return std::bit_cast<float>(bits);
}

}  // namespace

nlohmann::json head_to_json(const RegressionHead& head) {
  if (!head.all_finite()) throw DataError("refusing to save a head with non-finite weights");
  std::string blob;
  blob.reserve(4 * head.parameter_count());
  for (int r = 0; r < head.w1.rows(); ++r) {
    for (int c = 0; c < head.w1.cols(); ++c) append_f32(blob, head.w1(r, c));
  }
  for (int i = 0; i < head.b1.size(); ++i) append_f32(blob, head.b1[i]);
  for (int i = 0; i < head.w2.size(); ++i) append_f32(blob, head.w2[i]);
  append_f32(blob, head.b2);

  nlohmann::json meta = {{"seed", head.meta.seed},
                         {"epochs_run", head.meta.epochs_run},
                         {"best_epoch", head.meta.best_epoch},
                         {"best_val_spearman", head.meta.best_val_spearman},
                         {"label_source", head.meta.label_source},
                         {"restored_best", head.meta.restored_best},
                         {"config", head.meta.config}};
  return {{"format_version", kHeadFormatVersion},
          {"head_id", head.head_id},
          {"backbone_id", head.backbone_id},
          {"input_dim", head.input_dim()},
          {"hidden_dim", head.hidden_dim()},
          {"training_meta", meta},
          {"weights", detail::base64_encode(blob)}};
}

RegressionHead head_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("head file is not a JSON object");
  RegressionHead head;
  std::string blob;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kHeadFormatVersion) {
      throw VersionError("unsupported head format_version " + std::to_string(version) +
                         " (expected " + std::to_string(kHeadFormatVersion) + ")");
    }
    const int input_dim = j.at("input_dim").get<int>();
    const int hidden_dim = j.at("hidden_dim").get<int>();
    if (input_dim < 1 || hidden_dim < 1) throw FormatError("head dimensions must be positive");
    head = RegressionHead::zeros(input_dim, hidden_dim);
    head.head_id = j.value("head_id", std::string{});
    head.backbone_id = j.at("backbone_id").get<std::string>();
    const auto& meta = j.at("training_meta");
    head.meta.seed = meta.value("seed", std::uint64_t{0});
    head.meta.epochs_run = meta.value("epochs_run", 0);
    head.meta.best_epoch = meta.value("best_epoch", 0);
    head.meta.best_val_spearman = meta.value("best_val_spearman", 0.0);
    head.meta.label_source = meta.value("label_source", std::string{});
    head.meta.restored_best = meta.value("restored_best", true);
    head.meta.config = meta.value("config", nlohmann::json::object());
    blob = detail::base64_decode(j.at("weights").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt head file: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const DataError& e) {
    throw FormatError(std::string("corrupt head file: ") + e.what());
  }
  if (blob.size() != 4 * head.parameter_count()) {
    throw FormatError("corrupt head file: weight blob holds " + std::to_string(blob.size()) +
                      " bytes, expected " + std::to_string(4 * head.parameter_count()));
  }
  std::size_t pos = 0;
  for (int r = 0; r < head.w1.rows(); ++r) {
    for (int c = 0; c < head.w1.cols(); ++c) head.w1(r, c) = read_f32(blob, pos);
  }
  for (int i = 0; i < head.b1.size(); ++i) head.b1[i] = read_f32(blob, pos);
  for (int i = 0; i < head.w2.size(); ++i) head.w2[i] = read_f32(blob, pos);
  head.b2 = read_f32(blob, pos);
  if (!head.all_finite()) throw FormatError("corrupt head file: non-finite weights");
  return head;
}

std::string head_serialize(const RegressionHead& head) { return head_to_json(head).dump(2) + "\n"; }

void head_save(const std::filesystem::path& path, const RegressionHead& head) {
  const std::string text = head_serialize(head);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

RegressionHead head_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open head file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt head file ") + path.string() + ": " + e.what());
  }
  return head_from_json(j);
}

}  // namespace qc

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

#include "qcurate/cli.hpp"

#include <glob.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "qcurate/annotations.hpp"
#include "qcurate/corpus.hpp"
#include "qcurate/embeddings.hpp"
#include "qcurate/error.hpp"
#include "qcurate/filterpipe.hpp"
#include "qcurate/manifest.hpp"
#include "qcurate/metrics.hpp"
#include "qcurate/regressor.hpp"
#include "qcurate/thresholds.hpp"

namespace qc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Run {
  std::ostream& out;
  std::ostream& err;
  RunManifest manifest;
  fs::path manifest_path;
};

// ---------------------------------------------------------------------------
// file helpers

std::vector<fs::path> expand_inputs(const std::vector<std::string>& patterns) {
  std::vector<fs::path> out;
  for (const auto& p : patterns) {
    glob_t g{};
    const int rc = ::glob(p.c_str(), 0, nullptr, &g);
    if (rc == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    ::globfree(&g);
    if (rc == GLOB_NOMATCH) throw IoError("no input matches '" + p + "'");
    if (rc != 0 && rc != GLOB_NOMATCH) throw IoError("cannot expand '" + p + "'");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return in;
}

json read_json_file(const fs::path& p) {
  auto in = open_in(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

// Calls `fn` for each non-blank line; malformed JSON is a data error naming the line.
void for_each_jsonl(const fs::path& p, const std::function<void(const json&, std::uint64_t)>& fn) {
  auto in = open_in(p);
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(p.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      fn(j, line_no);
    } catch (const json::exception& e) {
      throw DataError(p.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (in.bad()) throw IoError("read failure on " + p.string());
}

void write_text_atomic(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

void write_json(const fs::path& p, const json& j) { write_text_atomic(p, j.dump(2) + "\n"); }

std::vector<AggregatedLabel> read_labels(const fs::path& p,
                                         std::map<std::string, std::string>* langs = nullptr) {
  std::vector<AggregatedLabel> labels;
  std::set<std::string> seen;
  for_each_jsonl(p, [&](const json& j, std::uint64_t line) {
    AggregatedLabel l;
    try {
      l = label_from_json(j);
    } catch (const DataError& e) {
      throw DataError(p.string() + ":" + std::to_string(line) + ": " + e.what());
    }
    if (!seen.insert(l.doc_id).second) throw DataError("duplicate doc_id '" + l.doc_id + "' in " + p.string());
    if (langs) {
      if (auto it = j.find("lang"); it != j.end() && it->is_string()) (*langs)[l.doc_id] = it->get<std::string>();
    }
    labels.push_back(std::move(l));
  });
  return labels;
}

std::vector<RegressionHead> load_heads(const std::vector<std::string>& paths, Run& run) {
  std::vector<RegressionHead> heads;
  std::set<std::string> ids;
  for (const auto& p : paths) {
    RegressionHead h = head_load(p);
    if (h.head_id.empty()) h.head_id = fs::path(p).stem().string();
    if (!ids.insert(h.head_id).second) throw DataError("two heads share the id '" + h.head_id + "'");
    run.manifest.inputs.push_back(p);
    run.manifest.artifact_hashes[p] = sha256_file(p);
    heads.push_back(std::move(h));
  }
  return heads;
}

std::map<std::string, std::vector<double>> score_store(const std::vector<RegressionHead>& heads,
                                                       const EmbeddingStore& store) {
  std::map<std::string, std::vector<double>> scores;
  constexpr std::size_t kChunk = 4096;
  const auto& ids = store.ids();
  for (std::size_t lo = 0; lo < ids.size(); lo += kChunk) {
    std::vector<EmbeddingVector> vecs;
    for (std::size_t i = lo; i < std::min(ids.size(), lo + kChunk); ++i) vecs.push_back(*store.get(ids[i]));
    for (const auto& h : heads) {
      const auto s = predict_batch(h, vecs);
      auto& dst = scores[h.head_id];
      dst.insert(dst.end(), s.begin(), s.end());
    }
  }
  return scores;
}

// ---------------------------------------------------------------------------
// commands

struct AggregateOpts {
  std::string votes;
  std::string out;
  std::string report;
};

json report_to_json(const AgreementReport& r, std::uint64_t invalid) {
  json cdf = json::object();
  for (int s = 0; s < kNumScoreLevels; ++s) cdf[std::to_string(s)] = r.spread_cdf[s];
  return {{"documents", r.documents},
          {"invalid_records", invalid},
          {"majority_share", r.majority_share},
          {"label_std", r.label_std},
          {"label_std_convention", "mean of per-document population standard deviations"},
          {"spread_cdf", cdf}};
}

int cmd_aggregate(const AggregateOpts& o, Run& run) {
  run.manifest.inputs = {o.votes};
  std::vector<ScoreVotes> valid;
  std::vector<json> rows;
  std::uint64_t invalid = 0;
  std::set<std::string> seen;
  for_each_jsonl(o.votes, [&](const json& j, std::uint64_t line) {
    RawVoteRecord rec;
    try {
      rec = raw_votes_from_json(j);
    } catch (const DataError& e) {
      throw DataError(o.votes + ":" + std::to_string(line) + ": " + e.what());
    }
    if (!seen.insert(rec.doc_id).second) throw DataError("duplicate doc_id '" + rec.doc_id + "'");
    auto votes = validate_votes(rec.votes);
    if (votes.empty()) {
      ++invalid;
      return;
    }
    json row = label_to_json(aggregate(votes, rec.doc_id));
    if (auto it = j.find("lang"); it != j.end()) row["lang"] = *it;
    rows.push_back(std::move(row));
    valid.push_back({rec.doc_id, std::move(votes)});
  });
  if (valid.empty()) throw DataError("empty dataset: no record with a valid vote");
  const AgreementReport report = agreement_report(valid);

  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_text_atomic(o.out, text);
  run.manifest.outputs.push_back(o.out);
  const json rep = report_to_json(report, invalid);
  if (!o.report.empty()) {
    write_json(o.report, rep);
    run.manifest.outputs.push_back(o.report);
  }
  run.out << rep.dump(2) << "\n";
  return kOk;
}

struct TrainOpts {
  std::string store;
  std::string labels;
  std::string out;
  std::string history;
  std::string config_file;
  std::string head_id;
  std::size_t balance = 0;
  TrainConfig cfg;
};

int cmd_train(TrainOpts& o, const CLI::App& app, Run& run) {
  TrainConfig cfg;
  if (!o.config_file.empty()) {
    merge_json(cfg, read_json_file(o.config_file));
    run.manifest.inputs.push_back(o.config_file);
  }
  // flags override the config file
  auto given = [&](const char* name) { return app.count(name) > 0; };
  if (given("--hidden-dim")) cfg.hidden_dim = o.cfg.hidden_dim;
  if (given("--lr-peak")) cfg.lr_peak = o.cfg.lr_peak;
  if (given("--lr-min")) cfg.lr_min = o.cfg.lr_min;
  if (given("--batch-size")) cfg.batch_size = o.cfg.batch_size;
  if (given("--max-epochs")) cfg.max_epochs = o.cfg.max_epochs;
  if (given("--val-fraction")) cfg.val_fraction = o.cfg.val_fraction;
  if (given("--early-stop-delta")) cfg.early_stop_delta = o.cfg.early_stop_delta;
  if (given("--early-stop-patience")) cfg.early_stop_patience = o.cfg.early_stop_patience;
  if (given("--weight-decay")) cfg.weight_decay = o.cfg.weight_decay;
  if (given("--seed")) cfg.seed = o.cfg.seed;
  cfg.validate();

  const EmbeddingStore store = EmbeddingStore::open(o.store);
  auto labels = read_labels(o.labels);
  run.manifest.inputs.push_back(o.store);
  run.manifest.inputs.push_back(o.labels);
  run.manifest.artifact_hashes[o.labels] = sha256_file(o.labels);
  std::string label_source = "aggregated";
  if (o.balance > 0) {
    const auto sample = balanced_sample(labels, o.balance, cfg.seed);
    if (sample.short_supply) {
      run.err << "warning: --balance " << o.balance << " exceeds " << labels.size()
              << " available labels; using all of them\n";
    }
    std::map<std::string, const AggregatedLabel*> by_id;
    for (const auto& l : labels) by_id[l.doc_id] = &l;
    std::vector<AggregatedLabel> picked;
    for (const auto& id : sample.doc_ids) picked.push_back(*by_id.at(id));
    labels = std::move(picked);
    label_source = "balanced";
  }

  TrainResult result = train(store, labels, cfg);
  result.head.head_id = o.head_id.empty() ? fs::path(o.out).stem().string() : o.head_id;
  result.head.meta.label_source = label_source;
  head_save(o.out, result.head);
  run.manifest.outputs.push_back(o.out);
  run.manifest.artifact_hashes[o.out] = sha256_file(o.out);
  run.manifest.seed = cfg.seed;
  run.manifest.config = cfg;

  json hist = {{"initial_train_loss", result.history.initial_train_loss}, {"epochs", json::array()}};
  for (const auto& e : result.history.epochs) {
    hist["epochs"].push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_spearman", e.val_spearman}, {"lr", e.lr}});
  }
  const std::string history_path =
      o.history.empty() ? (fs::path(o.out).replace_extension(".history.json")).string() : o.history;
  write_json(history_path, hist);
  run.manifest.outputs.push_back(history_path);

  run.out << json{{"head", o.out},
                  {"head_id", result.head.head_id},
                  {"parameters", result.head.parameter_count()},
                  {"epochs_run", result.head.meta.epochs_run},
                  {"best_epoch", result.head.meta.best_epoch},
                  {"best_val_spearman", result.head.meta.best_val_spearman}}
                 .dump(2)
          << "\n";
  return kOk;
}

struct EvalOpts {
  std::vector<std::string> heads;
  std::string store;
  std::string labels;
  std::string out;
};

json evaluate_group(const std::vector<double>& truth, const std::vector<double>& preds) {
  json m = {{"n", truth.size()}};
  if (truth.size() < 3) {
    m["error"] = "fewer than 3 documents";
    return m;
  }
  try {
    const double rho = spearman(preds, truth);
    m["spearman"] = rho;
    m["p_value"] = truth.size() >= 4 ? json(spearman_pvalue(rho, truth.size())) : json(nullptr);
  } catch (const DataError& e) {
    m["spearman"] = nullptr;
    m["error"] = e.what();
  }
  std::vector<int> t, p;
  for (double v : truth) t.push_back(score_class(v));
  for (double v : preds) p.push_back(score_class(v));
  m["macro_f1"] = macro_f1(t, p);
  m["macro_f1_classes"] = "classes present in ground truth";
  const ConfusionMatrix cm = confusion(t, p);
  json rows = json::array();
  for (int r = 0; r < kNumScoreLevels; ++r) {
    json row = json::array();
    for (int c = 0; c < kNumScoreLevels; ++c) row.push_back(cm.counts(r, c));
    rows.push_back(row);
  }
  m["confusion"] = rows;
  return m;
}

int cmd_eval(const EvalOpts& o, Run& run) {
  const auto heads = load_heads(o.heads, run);
  const EmbeddingStore store = EmbeddingStore::open(o.store);
  std::map<std::string, std::string> langs;
  const auto labels = read_labels(o.labels, &langs);
  run.manifest.inputs.push_back(o.store);
  run.manifest.inputs.push_back(o.labels);
  if (labels.size() < 3) throw DataError("evaluation needs at least 3 ground-truth documents");
  const TrainingSet set = assemble_training_set(store, labels);

  json report = json::object();
  for (const auto& h : heads) {
    if (h.input_dim() != store.dim()) throw DimensionMismatch(h.input_dim(), store.dim());
    const Eigen::RowVectorXf scores = forward_batch(h, set.x);
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double truth = labels[i].score;
      const double pred = scores[static_cast<Eigen::Index>(i)];
      groups["all"].first.push_back(truth);
      groups["all"].second.push_back(pred);
      if (auto it = langs.find(labels[i].doc_id); it != langs.end()) {
        groups[it->second].first.push_back(truth);
        groups[it->second].second.push_back(pred);
      }
    }
    json per = json::object();
    for (const auto& [lang, g] : groups) per[lang] = evaluate_group(g.first, g.second);
    if (per["all"].contains("error") && per["all"]["spearman"].is_null()) {
      throw DataError("head '" + h.head_id + "': " + per["all"]["error"].get<std::string>());
    }
    report[h.head_id] = per;
  }
  if (!o.out.empty()) {
    write_json(o.out, report);
    run.manifest.outputs.push_back(o.out);
  }
  run.out << report.dump(2) << "\n";
  return kOk;
}

struct ThresholdOpts {
  std::vector<std::string> heads;
  std::string store;
  std::string scores;
  double percentile = 0.7;
  std::string out;
};

int cmd_thresholds(const ThresholdOpts& o, Run& run) {
  std::map<std::string, std::vector<double>> scores;
  if (!o.scores.empty()) {
    const json j = read_json_file(o.scores);
    run.manifest.inputs.push_back(o.scores);
    if (!j.is_object()) throw DataError("scores file must map head ids to arrays of scores");
    try {
      scores = j.get<std::map<std::string, std::vector<double>>>();
    } catch (const json::exception& e) {
      throw DataError(std::string("bad scores file: ") + e.what());
    }
  } else {
    if (o.heads.empty() || o.store.empty()) throw UsageError("need --scores, or --head with --store");
    const auto heads = load_heads(o.heads, run);
    const EmbeddingStore store = EmbeddingStore::open(o.store);
    run.manifest.inputs.push_back(o.store);
    for (const auto& h : heads) {
      if (h.input_dim() != store.dim()) throw DimensionMismatch(h.input_dim(), store.dim());
    }
    scores = score_store(heads, store);
  }
  const auto specs = compute_thresholds(scores, o.percentile);
  const json j = specs;
  run.manifest.config = {{"percentile", o.percentile}};
  if (!o.out.empty()) {
    write_json(o.out, j);
    run.manifest.outputs.push_back(o.out);
    run.manifest.artifact_hashes[o.out] = sha256_file(o.out);
  }
  run.out << j.dump(2) << "\n";
  return kOk;
}

struct FilterOpts {
  std::vector<std::string> inputs;
  std::vector<std::string> heads;
  std::string thresholds;
  std::string provider;
  std::string out_dir;
  bool keep_rejects = false;
  std::size_t workers = 1;
  std::size_t batch_size = 512;
};

int cmd_filter(const FilterOpts& o, Run& run) {
  const auto shards = expand_inputs(o.inputs);
  auto heads = load_heads(o.heads, run);
  const auto specs = thresholds_from_json(read_json_file(o.thresholds));
  run.manifest.inputs.push_back(o.thresholds);
  run.manifest.artifact_hashes[o.thresholds] = sha256_file(o.thresholds);
  for (const auto& s : shards) run.manifest.inputs.push_back(s.string());
  const EnsembleConfig ensemble = make_ensemble(std::move(heads), specs);
  auto provider = make_provider(o.provider);

  PipelineOptions opts;
  opts.out_dir = o.out_dir;
  opts.keep_rejects = o.keep_rejects;
  opts.workers = o.workers;
  opts.batch_size = o.batch_size;
  run.manifest.config = {{"provider", o.provider},
                         {"keep_rejects", o.keep_rejects},
                         {"workers", o.workers},
                         {"batch_size", o.batch_size},
                         {"decision_rule", "all-above"}};
  const PipelineResult result = run_pipeline(shards, *provider, ensemble, opts);

  json stats = result.stats;
  write_json(fs::path(o.out_dir) / "stats.json", stats);
  run.manifest.outputs.push_back((fs::path(o.out_dir) / "stats.json").string());
  json summary = {{"stats", stats},
                  {"shards_processed", result.shards_processed},
                  {"shards_skipped", result.shards_skipped},
                  {"seconds", result.seconds},
                  {"docs_per_minute", result.docs_per_minute()},
                  {"tokens_per_minute", result.tokens_per_minute()},
                  {"failures", json::array()}};
  for (const auto& f : result.failures) summary["failures"].push_back({{"shard", f.shard}, {"error", f.error}});
  run.out << summary.dump(2) << "\n";
  if (!result.failures.empty()) {
    run.err << result.failures.size() << " shard(s) failed\n";
    return kDataError;
  }
  return kOk;
}

struct EmbedOpts {
  std::vector<std::string> inputs;
  std::string provider;
  std::string out;
  std::size_t batch_size = 1000;
};

int cmd_embed(const EmbedOpts& o, Run& run) {
  const auto shards = expand_inputs(o.inputs);
  auto provider = make_provider(o.provider);
  std::unique_ptr<StoreWriter> writer;
  std::uint64_t invalid = 0;
  auto flush = [&](std::vector<Document>& batch) {
    if (batch.empty()) return;
    const auto vecs = provider->embed(batch);
    if (!writer) {
      writer = std::make_unique<StoreWriter>(o.out, provider->backbone_id(),
                                             static_cast<int>(vecs.front().values.size()));
    }
    for (const auto& v : vecs) writer->append(v);
    batch.clear();
  };
  for (const auto& s : shards) {
    run.manifest.inputs.push_back(s.string());
    auto in = open_in(s);
    ShardReader reader(in);
    std::vector<Document> batch;
    while (auto rec = reader.next()) {
      if (auto* d = std::get_if<Document>(&*rec)) {
        batch.push_back(std::move(*d));
        if (batch.size() >= o.batch_size) flush(batch);
      } else {
        const auto& e = std::get<ParseError>(*rec);
        run.err << s.string() << ":" << e.line << ": skipped: " << e.message << "\n";
      }
    }
    flush(batch);
    invalid += reader.stats().documents_invalid;
  }
  if (!writer) {
    if (provider->dim() < 1) throw DataError("no documents to embed and provider dimension unknown");
    writer = std::make_unique<StoreWriter>(o.out, provider->backbone_id(), provider->dim());
  }
  const std::uint64_t count = writer->count();
  writer->finish();
  run.manifest.config = {{"provider", o.provider}, {"batch_size", o.batch_size}};
  run.manifest.outputs.push_back(o.out);
  run.out << json{{"store", o.out}, {"vectors", count}, {"invalid_records", invalid}}.dump(2) << "\n";
  return kOk;
}

struct StatsOpts {
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_stats(const StatsOpts& o, Run& run) {
  std::map<std::string, std::vector<double>> scores;
  std::vector<bool> kept;
  bool have_partition = true;
  std::size_t rows = 0;
  for (const auto& p : expand_inputs(o.inputs)) {
    run.manifest.inputs.push_back(p.string());
    for_each_jsonl(p, [&](const json& j, std::uint64_t line) {
      auto s = j.find("scores");
      if (s == j.end() || !s->is_object()) {
        throw DataError(p.string() + ":" + std::to_string(line) + ": record has no scores object");
      }
      for (auto it = s->begin(); it != s->end(); ++it) {
        auto& dst = scores[it.key()];
        if (dst.size() != rows) throw DataError(p.string() + ":" + std::to_string(line) + ": head set changed");
        dst.push_back(it.value().get<double>());
      }
      ++rows;
      for (const auto& [k, v] : scores) {
        if (v.size() != rows) throw DataError(p.string() + ":" + std::to_string(line) + ": missing score for " + k);
      }
      if (auto d = j.find("decision"); d != j.end() && d->is_string()) {
        kept.push_back(*d == "keep");
      } else {
        have_partition = false;
      }
    });
  }
  if (rows == 0) throw DataError("no scored records to summarize");
  const auto report =
      score_distribution_report(scores, have_partition ? std::optional(kept) : std::nullopt);
  const json j = report;
  if (!o.out.empty()) {
    write_json(o.out, j);
    run.manifest.outputs.push_back(o.out);
  }
  run.out << j.dump(2) << "\n";
  return kOk;
}

std::string error_kind(int code) {
  switch (code) {
    case kUsageError: return "usage";
    case kDataError: return "data";
    case kIoError: return "io";
    default: return "internal";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Document quality curation: label aggregation, head training, evaluation and filtering"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "qcurate 0.1.0");
  std::string manifest_path;
  app.add_option("--manifest", manifest_path,
                 "Run manifest log to append to (default: qcurate_runs.jsonl beside the output)");

  Run run{out, err, {}, {}};
  std::function<int()> action;
  fs::path primary_output;

  AggregateOpts agg;
  auto* c_agg = app.add_subcommand("aggregate", "Aggregate vote records into labels plus an agreement report");
  c_agg->add_option("--votes", agg.votes, "Vote records (JSON per line)")->required();
  c_agg->add_option("--out", agg.out, "Aggregated label output (JSON per line)")->required();
  c_agg->add_option("--report", agg.report, "Agreement report output (JSON)");
  c_agg->callback([&] {
    primary_output = agg.out;
    action = [&] { return cmd_aggregate(agg, run); };
  });

  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "Train a regression head on stored embeddings");
  c_train->add_option("--store", tr.store, "Embedding store (.jqle)")->required();
  c_train->add_option("--labels", tr.labels, "Aggregated labels (JSON per line)")->required();
  c_train->add_option("--out", tr.out, "Head file to write")->required();
  c_train->add_option("--history", tr.history, "Training history output (default: <out>.history.json)");
  c_train->add_option("--config", tr.config_file, "JSON train config; flags take precedence");
  c_train->add_option("--head-id", tr.head_id, "Head id (default: output file stem)");
  c_train->add_option("--balance", tr.balance, "Draw a label-balanced sample of this size first");
  c_train->add_option("--hidden-dim", tr.cfg.hidden_dim)->check(CLI::PositiveNumber);
  c_train->add_option("--lr-peak", tr.cfg.lr_peak);
  c_train->add_option("--lr-min", tr.cfg.lr_min);
  c_train->add_option("--batch-size", tr.cfg.batch_size)->check(CLI::PositiveNumber);
  c_train->add_option("--max-epochs", tr.cfg.max_epochs)->check(CLI::PositiveNumber);
  c_train->add_option("--val-fraction", tr.cfg.val_fraction);
  c_train->add_option("--early-stop-delta", tr.cfg.early_stop_delta);
  c_train->add_option("--early-stop-patience", tr.cfg.early_stop_patience)->check(CLI::PositiveNumber);
  c_train->add_option("--weight-decay", tr.cfg.weight_decay);
  c_train->add_option("--seed", tr.cfg.seed);
  c_train->callback([&] {
    primary_output = tr.out;
    action = [&] { return cmd_train(tr, *c_train, run); };
  });

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate heads against ground-truth labels");
  c_eval->add_option("--head", ev.heads, "Head file(s)")->required();
  c_eval->add_option("--store", ev.store, "Embedding store holding the ground-truth documents")->required();
  c_eval->add_option("--labels", ev.labels, "Ground-truth labels (JSON per line, optional lang)")->required();
  c_eval->add_option("--out", ev.out, "Metrics output (JSON)");
  c_eval->callback([&] {
    primary_output = ev.out;
    action = [&] { return cmd_eval(ev, run); };
  });

  ThresholdOpts th;
  auto* c_th = app.add_subcommand("thresholds", "Compute per-head percentile thresholds");
  c_th->add_option("--head", th.heads, "Head file(s) to score the store with");
  c_th->add_option("--store", th.store, "Reference embedding store");
  c_th->add_option("--scores", th.scores, "JSON object mapping head id to reference scores");
  c_th->add_option("--percentile", th.percentile, "Percentile in [0, 1]")->required()->check(CLI::Range(0.0, 1.0));
  c_th->add_option("--out", th.out, "Threshold file to write");
  c_th->callback([&] {
    primary_output = th.out;
    action = [&] { return cmd_thresholds(th, run); };
  });

  FilterOpts fi;
  auto* c_fi = app.add_subcommand("filter", "Filter corpus shards with an ensemble of heads");
  c_fi->add_option("--input", fi.inputs, "Input shard path(s) or glob(s)")->required();
  c_fi->add_option("--head", fi.heads, "Head file(s)")->required();
  c_fi->add_option("--thresholds", fi.thresholds, "Threshold file")->required();
  c_fi->add_option("--provider", fi.provider, "mock:<dim>[:<seed>], store:<path>, or http(s)://...")->required();
  c_fi->add_option("--out-dir", fi.out_dir, "Output directory")->required();
  c_fi->add_flag("--keep-rejects", fi.keep_rejects, "Also write dropped documents with their scores");
  c_fi->add_option("--workers", fi.workers, "Shards processed concurrently")->check(CLI::PositiveNumber);
  c_fi->add_option("--batch-size", fi.batch_size, "Documents per embedding round")->check(CLI::PositiveNumber);
  c_fi->callback([&] {
    primary_output = fs::path(fi.out_dir) / "stats.json";
    action = [&] { return cmd_filter(fi, run); };
  });

  EmbedOpts em;
  auto* c_em = app.add_subcommand("embed", "Materialize provider embeddings into a store");
  c_em->add_option("--input", em.inputs, "Input shard path(s) or glob(s)")->required();
  c_em->add_option("--provider", em.provider, "mock:<dim>[:<seed>], store:<path>, or http(s)://...")->required();
  c_em->add_option("--out", em.out, "Store file to write")->required();
  c_em->add_option("--batch-size", em.batch_size, "Documents per provider call")->check(CLI::PositiveNumber);
  c_em->callback([&] {
    primary_output = em.out;
    action = [&] { return cmd_embed(em, run); };
  });

  StatsOpts st;
  auto* c_st = app.add_subcommand("stats", "Score distribution report over scored filter outputs");
  c_st->add_option("--input", st.inputs, "Scored records (kept/rejects outputs)")->required();
  c_st->add_option("--out", st.out, "Report output (JSON)");
  c_st->callback([&] {
    primary_output = st.out;
    action = [&] { return cmd_stats(st, run); };
  });

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int rc = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return rc == 0 ? kOk : kUsageError;
  }

  RunManifest& m = run.manifest;
  m.command = app.get_subcommands().front()->get_name();
  m.argv = args;
  m.started = utc_timestamp();
  int code = kOk;
  try {
    code = action();
  } catch (const UsageError& e) {
    code = kUsageError;
    m.error = e.what();
  } catch (const DataError& e) {
    code = kDataError;
    m.error = e.what();
  } catch (const IoError& e) {
    code = kIoError;
    m.error = e.what();
  } catch (const fs::filesystem_error& e) {
    code = kIoError;
    m.error = e.what();
  } catch (const std::exception& e) {
    code = 1;
    m.error = e.what();
  }
  m.finished = utc_timestamp();
  m.exit_code = code;
  if (code != kOk && !m.error.empty()) {
    err << json{{"error", error_kind(code)}, {"command", m.command}, {"message", m.error}}.dump() << "\n";
  }

  fs::path mpath = manifest_path;
  if (mpath.empty()) {
    const fs::path dir = primary_output.has_parent_path() ? primary_output.parent_path() : fs::path(".");
    mpath = dir / "qcurate_runs.jsonl";
  }
  try {
    if (mpath.has_parent_path()) fs::create_directories(mpath.parent_path());
    append_manifest(mpath, m);
  } catch (const std::exception& e) {
    err << "warning: could not write run manifest: " << e.what() << "\n";
  }
  return code;
}

}  // namespace qc::cli

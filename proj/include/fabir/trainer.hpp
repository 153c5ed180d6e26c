#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fabir/checkpoint.hpp"
#include "fabir/data_io.hpp"
#include "fabir/model.hpp"
#include "fabir/optimizer.hpp"

namespace fabir {

struct TrainOptions {
  std::size_t epochs = 54;
  std::size_t batch_size = 75;
  std::size_t warmup_steps = 4000;
  double lr_factor = 0.5;
  std::vector<std::size_t> bucket_edges = default_bucket_edges();
  std::size_t eval_batch_size = 64;
  bool record_wall_time = true;  // false writes 0 so history files are reproducible
  std::optional<double> target_em;  // stop once dev EM reaches this
};

struct HistoryRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double em = 0.0;
  double f1 = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since training started

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"step", step}, {"loss", loss}, {"em", em}, {"f1", f1}, {"lr", lr}, {"wall_time", wall_time}};
  }
};

inline std::string history_jsonl(const std::vector<HistoryRecord>& history) {
  std::string out;
  for (const auto& r : history) out += r.to_json().dump() + "\n";
  return out;
}

struct PreparedSet {
  std::vector<PreparedExample> examples;
  std::size_t unalignable = 0;  // answers that matched no token
  std::size_t skipped = 0;      // examples with empty passage/question or no span (training only)
};

/// Tokenizes, aligns and encodes examples. With `require_span`, examples with
/// no alignable answer are dropped and counted.
template <typename T>
PreparedSet prepare(const std::vector<SquadExample>& examples, const WordVocab<T>& vocab, bool require_span) {
  PreparedSet set;
  TokenizeStats stats;
  for (const auto& ex : examples) {
    TokenizedExample tok = tokenize_example(ex, &stats);
    if (tok.passage_tokens.empty() || tok.question_tokens.empty() || (require_span && tok.spans.empty())) {
      ++set.skipped;
      continue;
    }
    set.examples.push_back(prepare_example(std::move(tok), vocab));
  }
  set.unalignable = stats.unalignable;
  return set;
}

struct PredictResult {
  std::map<std::string, std::string> answers;
  std::map<std::string, SpanPrediction> spans;
  double samples_per_second = 0.0;
};

/// Batched inference: forward, constrained span decoding, and answer text
/// reconstructed from the original passage characters.
template <typename T>
PredictResult predict(const Model<T>& model, const std::vector<PreparedExample>& data, std::size_t batch_size = 64,
                      const std::vector<std::size_t>& edges = default_bucket_edges()) {
  NoGradScope<T> no_grad;
  PredictResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> plen, qlen;
  for (const auto& ex : data) {
    plen.push_back(ex.passage.size());
    qlen.push_back(ex.question.size());
  }
  Rng order(0);  // batch order does not affect answers
  for (const auto& batch : bucket_batches(plen, qlen, std::max<std::size_t>(batch_size, 1), edges, order)) {
    for (std::size_t idx : batch.indices) {
      const auto& ex = data[idx];
      const SequenceMasks masks{batch.passage_len, ex.passage.size(), batch.question_len, ex.question.size()};
      const Tensor<T> dist = model.forward(pad_encoded(ex.passage, batch.passage_len),
                                           pad_encoded(ex.question, batch.question_len), masks);
      const auto span = decode_span(distribution_column(dist, 0, ex.passage.size()),
                                    distribution_column(dist, 1, ex.passage.size()), model.config.max_answer_len);
      result.spans[ex.source.id] = span;
      result.answers[ex.source.id] = span_text(ex.source, span.start, span.end);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.samples_per_second = static_cast<double>(data.size()) / std::max(secs, 1e-9);
  return result;
}

template <typename T>
MetricReport evaluate_model(const Model<T>& model, const std::vector<PreparedExample>& data, std::size_t batch_size = 64) {
  const auto pred = predict(model, data, batch_size);
  std::vector<TokenizedExample> toks;
  toks.reserve(data.size());
  for (const auto& ex : data) toks.push_back(ex.source);
  return evaluate(pred.answers, toks);
}

struct TrainResult {
  std::vector<HistoryRecord> history;
  Checkpoint best;    // highest dev F1 (or latest when there is no dev set)
  Checkpoint latest;
  double best_f1 = -1.0;
};

/// Thrown on a non-finite loss; carries the last good checkpoint.
struct TrainingDiverged : DivergenceError {
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : DivergenceError(what), checkpoint(std::move(last_good)) {}
  Checkpoint checkpoint;
};

/// Mini-batch training with Adam and the warmup schedule. `resume` continues
/// from a checkpoint's optimizer state and history.
template <typename T>
TrainResult train(Model<T>& model, const std::vector<PreparedExample>& train_set,
                  const std::vector<PreparedExample>& dev_set, const TrainOptions& opts, Rng& rng,
                  const Checkpoint* resume = nullptr, const std::function<void(const HistoryRecord&)>& on_epoch = {}) {
  if (train_set.empty()) throw DataError("training set is empty");
  for (const auto& ex : train_set) {
    if (!ex.gold) throw DataError("training example '" + ex.source.id + "' has no aligned answer span");
  }
  AdamState<T> adam;
  TrainResult result;
  std::size_t first_epoch = 0;
  if (resume) {
    restore_checkpoint(*resume, model, &adam);
    first_epoch = resume->manifest.value("epoch", std::size_t{0});
    for (const auto& r : resume->manifest.value("history", nlohmann::json::array())) {
      result.history.push_back({r.at("epoch").get<std::size_t>(), r.at("step").get<std::size_t>(), r.at("loss").get<double>(),
                                r.at("em").get<double>(), r.at("f1").get<double>(), r.at("lr").get<double>(),
                                r.at("wall_time").get<double>()});
    }
  }
  auto history_json = [&]() {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& r : result.history) h.push_back(r.to_json());
    return h;
  };
  result.latest = make_checkpoint(model, &adam, first_epoch, history_json());
  result.best = result.latest;

  std::vector<std::size_t> plen, qlen;
  for (const auto& ex : train_set) {
    plen.push_back(ex.passage.size());
    qlen.push_back(ex.question.size());
  }
  const auto params = model.params.trainable();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = first_epoch; epoch < first_epoch + opts.epochs; ++epoch) {
    Rng epoch_rng = rng.fork(epoch);
    Rng dropout_rng = epoch_rng.fork(1);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    double lr = 0.0;
    for (const auto& batch : bucket_batches(plen, qlen, opts.batch_size, opts.bucket_edges, epoch_rng)) {
      Tape<T> tape;
      TapeScope<T> scope(tape);
      const ForwardContext ctx{true, &dropout_rng};
      const Tensor<T> loss = batch_loss(model, train_set, batch, ctx);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw TrainingDiverged("loss became non-finite at step " + std::to_string(adam.step + 1), result.latest);
      }
      tape.backward(loss);
      lr = lr_schedule(adam.step + 1, model.config.d_model, opts.warmup_steps, opts.lr_factor);
      try {
        adam_step(params, adam, lr);
      } catch (const DivergenceError& e) {
        throw TrainingDiverged(e.what(), result.latest);
      }
      model.params.zero_grad();
      loss_sum += value * static_cast<double>(batch.indices.size());
      loss_count += batch.indices.size();
    }
    HistoryRecord rec;
    rec.epoch = epoch + 1;
    rec.step = adam.step;
    rec.loss = loss_sum / static_cast<double>(loss_count);
    rec.lr = lr;
    if (!dev_set.empty()) {
      const auto report = evaluate_model(model, dev_set, opts.eval_batch_size);
      rec.em = report.em;
      rec.f1 = report.f1;
    }
    rec.wall_time = opts.record_wall_time
                        ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                        : 0.0;
    result.history.push_back(rec);
    result.latest = make_checkpoint(model, &adam, epoch + 1, history_json());
    if (dev_set.empty() || rec.f1 > result.best_f1) {
      result.best_f1 = rec.f1;
      result.best = result.latest;
    }
    if (on_epoch) on_epoch(rec);
    if (opts.target_em && !dev_set.empty() && rec.em >= *opts.target_em) break;
  }
  return result;
}

}  // namespace fabir

#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fabir/checkpoint.hpp"
#include "fabir/config.hpp"
#include "fabir/data_io.hpp"
#include "fabir/model.hpp"
#include "fabir/synthetic.hpp"
#include "fabir/trainer.hpp"

namespace fabir::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kDivergence = 4 };

inline constexpr std::size_t kReferenceParameterCount = 1385198;

struct RunOptions {
  std::string command;
  std::string train_path, dev_path, vectors_path, checkpoint_path, out_path, history_path, config_path;
  std::string predictions_path, report_path, resume_path;
  std::optional<std::size_t> epochs, batch_size, warmup;
  std::optional<double> lr_factor;
  std::uint64_t seed = 7;
  int precision = 32;
  bool synthetic = false;
  std::size_t synthetic_train = synthetic::kTrainExamples, synthetic_dev = synthetic::kDevExamples;
  std::optional<double> target_em;
  bool deterministic = false;
  bool json = false;
  bool against_reference = false;
  std::map<std::string, std::string> overrides;  // model config from flags
};

namespace detail {

inline std::string config_help() {
  std::ostringstream os;
  os << "Config file: one key=value per line ('#' starts a comment); flags override file values.\n"
     << "Model keys:\n";
  const ModelConfig defaults;
  const auto kv = defaults.to_kv();
  for (const auto& [name, field] : fabir::detail::model_fields()) {
    os << "  " << std::left << std::setw(22) << name << field.help << " (default " << kv.at(name) << ")\n";
  }
  os << "Training keys:\n"
     << "  epochs                training epochs\n"
     << "  batch_size            examples per update\n"
     << "  warmup_steps          learning-rate warmup steps\n"
     << "  lr_factor             learning-rate scale factor\n"
     << "  seed                  master random seed\n"
     << "Exit codes: 0 success, 2 usage/config, 3 data/checkpoint, 4 numeric divergence.\n";
  return os.str();
}

struct ResolvedRun {
  ModelConfig config;
  TrainOptions train;
  std::uint64_t seed;
};

inline ResolvedRun resolve(const RunOptions& o, ModelConfig base) {
  ResolvedRun r{base, {}, o.seed};
  if (o.synthetic) {
    r.train.epochs = synthetic::kEpochs;
    r.train.batch_size = synthetic::kBatchSize;
    r.train.warmup_steps = synthetic::kWarmupSteps;
  }
  if (!o.config_path.empty()) {
    for (const auto& [k, v] : load_kv_file(o.config_path)) {
      if (k == "epochs") r.train.epochs = fabir::detail::parse_size(k, v);
      else if (k == "batch_size") r.train.batch_size = fabir::detail::parse_size(k, v);
      else if (k == "warmup_steps") r.train.warmup_steps = fabir::detail::parse_size(k, v);
      else if (k == "lr_factor") r.train.lr_factor = fabir::detail::parse_double(k, v);
      else if (k == "seed") r.seed = fabir::detail::parse_size(k, v);
      else r.config.set(k, v);
    }
  }
  for (const auto& [k, v] : o.overrides) r.config.set(k, v);
  if (o.epochs) r.train.epochs = *o.epochs;
  if (o.batch_size) r.train.batch_size = *o.batch_size;
  if (o.warmup) r.train.warmup_steps = *o.warmup;
  if (o.lr_factor) r.train.lr_factor = *o.lr_factor;
  if (r.train.batch_size == 0) throw ConfigError("batch size must be positive");
  if (r.train.warmup_steps == 0) throw ConfigError("warmup steps must be positive");
  r.train.record_wall_time = !o.deterministic;
  r.train.target_em = o.target_em;
  r.config.validate();
  return r;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline std::string fmt1(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << x;
  return os.str();
}

// Synthetic splits and vectors derived from the master seed.
struct SyntheticData {
  std::vector<SquadExample> train, dev;
};

inline SyntheticData synthetic_data(const RunOptions& o, std::uint64_t seed) {
  Rng data_rng = Rng(seed).fork(2);
  SyntheticData d;
  d.train = synthetic::generate(o.synthetic_train, data_rng, "train-");
  d.dev = synthetic::generate(o.synthetic_dev, data_rng, "dev-");
  return d;
}

template <typename T>
WordVocab<T> synthetic_vocab(std::size_t dim, std::uint64_t seed) {
  Rng vec_rng = Rng(seed).fork(3);
  return synthetic::word_vectors<T>(dim, vec_rng);
}

template <typename T>
int cmd_train(const RunOptions& o, std::ostream& out, std::ostream& err) {
  if (o.train_path.empty() && !o.synthetic) {
    err << "train: either --train <file> or --synthetic is required\n";
    return kUsage;
  }
  if (!o.synthetic && o.vectors_path.empty()) {
    err << "train: --vectors <file> is required with --train\n";
    return kUsage;
  }
  const ResolvedRun run = resolve(o, o.synthetic ? synthetic::toy_config() : ModelConfig{});
  std::vector<SquadExample> train_raw, dev_raw;
  WordVocab<T> vocab(run.config.word_dim);
  if (o.synthetic) {
    auto d = synthetic_data(o, run.seed);
    train_raw = std::move(d.train);
    dev_raw = std::move(d.dev);
    vocab = synthetic_vocab<T>(run.config.word_dim, run.seed);
  } else {
    auto train_set = load_squad(o.train_path);
    for (const auto& r : train_set.rejects) err << "skipped training entry '" << r.id << "': " << r.reason << "\n";
    train_raw = std::move(train_set.examples);
    if (!o.dev_path.empty()) dev_raw = load_squad(o.dev_path).examples;
    vocab = load_word_vectors<T>(o.vectors_path, run.config.word_dim);
  }
  Rng root(run.seed);
  Model<T> model = build_model<T>(run.config, std::move(vocab), root.fork(1).next_u64());
  const auto train_set = prepare(train_raw, model.vocab, true);
  const auto dev_set = prepare(dev_raw, model.vocab, false);
  if (train_set.skipped) err << "skipped " << train_set.skipped << " training examples without an aligned answer\n";
  std::optional<Checkpoint> resume;
  if (!o.resume_path.empty()) resume = Checkpoint::load(o.resume_path);

  const std::string ckpt_path = o.out_path.empty() ? "fabir.ckpt" : o.out_path;
  const std::string history_path = o.history_path.empty() ? ckpt_path + ".history.jsonl" : o.history_path;
  Rng train_rng = root.fork(4);
  TrainResult result;
  try {
    result = train(model, train_set.examples, dev_set.examples, run.train, train_rng, resume ? &*resume : nullptr,
                   [&](const HistoryRecord& r) {
                     err << "epoch " << r.epoch << " step " << r.step << " loss " << r.loss << " em " << fmt1(r.em)
                         << " f1 " << fmt1(r.f1) << "\n";
                   });
  } catch (const TrainingDiverged& e) {
    e.checkpoint.save(ckpt_path);
    err << "training diverged: " << e.what() << "; last good checkpoint written to " << ckpt_path << "\n";
    return kDivergence;
  }
  result.best.save(ckpt_path);
  write_text(history_path, history_jsonl(result.history));
  if (result.history.empty()) {
    out << "no epochs run; initial checkpoint written\n";
  } else {
    out << "final dev EM " << fmt1(result.history.back().em) << " F1 " << fmt1(result.history.back().f1) << "\n";
  }
  out << "checkpoint " << ckpt_path << "\nhistory " << history_path << "\n";
  return kOk;
}

inline std::vector<SquadExample> load_eval_set(const RunOptions& o, std::ostream& err) {
  if (o.synthetic) return synthetic_data(o, o.seed).dev;
  auto set = load_squad(o.dev_path);
  for (const auto& r : set.rejects) err << "skipped entry '" << r.id << "': " << r.reason << "\n";
  return std::move(set.examples);
}

template <typename T>
std::map<std::string, std::string> predict_file(const RunOptions& o, const std::vector<SquadExample>& examples,
                                                double* samples_per_second) {
  AdamState<T>* no_adam = nullptr;
  const Checkpoint c = Checkpoint::load(o.checkpoint_path);
  Model<T> model = model_from_checkpoint<T>(c, no_adam);
  const auto prepared = prepare(examples, model.vocab, false);
  const auto result = predict(model, prepared.examples, o.batch_size.value_or(75));
  if (samples_per_second) *samples_per_second = result.samples_per_second;
  return result.answers;
}

template <typename T>
int cmd_eval(const RunOptions& o, std::ostream& out, std::ostream& err) {
  if (o.dev_path.empty() && !o.synthetic) {
    err << "eval: --dev <file> is required\n";
    return kUsage;
  }
  if (o.checkpoint_path.empty() == o.predictions_path.empty()) {
    err << "eval: exactly one of --checkpoint or --predictions is required\n";
    return kUsage;
  }
  const auto examples = load_eval_set(o, err);
  const auto predictions = o.predictions_path.empty() ? predict_file<T>(o, examples, nullptr)
                                                      : load_predictions(o.predictions_path);
  const MetricReport report = evaluate(predictions, examples);
  nlohmann::json j;
  j["em"] = report.em;
  j["f1"] = report.f1;
  j["count"] = report.per_example.size();
  j["missing"] = report.missing_ids;
  j["unknown"] = report.unknown_ids;
  j["examples"] = nlohmann::json::array();
  for (const auto& s : report.per_example) {
    j["examples"].push_back({{"id", s.id}, {"prediction", s.prediction}, {"em", s.em}, {"f1", s.f1}, {"missing", s.missing}});
  }
  const std::string report_path = o.report_path.empty() ? "eval_report.json" : o.report_path;
  write_text(report_path, j.dump(1) + "\n");
  if (o.json) {
    out << nlohmann::json{{"em", report.em}, {"f1", report.f1}, {"count", report.per_example.size()}}.dump() << "\n";
  } else {
    out << "EM " << fmt1(report.em) << " F1 " << fmt1(report.f1) << " (" << report.per_example.size() << " examples";
    if (!report.missing_ids.empty()) out << ", " << report.missing_ids.size() << " without prediction";
    out << ")\nreport " << report_path << "\n";
  }
  return kOk;
}

template <typename T>
int cmd_predict(const RunOptions& o, std::ostream& out, std::ostream& err) {
  if (o.checkpoint_path.empty() || (o.dev_path.empty() && !o.synthetic)) {
    err << "predict: --checkpoint and --input are required\n";
    return kUsage;
  }
  const auto examples = load_eval_set(o, err);
  double sps = 0.0;
  const auto answers = predict_file<T>(o, examples, &sps);
  if (o.out_path.empty()) {
    out << predictions_to_json(answers) << "\n";
    err << answers.size() << " predictions, " << fmt1(sps) << " samples/sec\n";
  } else {
    write_predictions(o.out_path, answers);
    out << answers.size() << " predictions written to " << o.out_path << ", " << fmt1(sps) << " samples/sec\n";
  }
  return kOk;
}

template <typename T>
int cmd_inspect(const RunOptions& o, std::ostream& out, std::ostream&) {
  std::optional<Model<T>> model;
  if (!o.checkpoint_path.empty()) {
    AdamState<T>* no_adam = nullptr;
    model = model_from_checkpoint<T>(Checkpoint::load(o.checkpoint_path), no_adam, o.overrides);
  } else {
    const ResolvedRun run = resolve(o, o.synthetic ? synthetic::toy_config() : ModelConfig{});
    WordVocab<T> vocab = o.vectors_path.empty() ? WordVocab<T>(run.config.word_dim)
                                                : load_word_vectors<T>(o.vectors_path, run.config.word_dim);
    model = build_model<T>(run.config, std::move(vocab), run.seed);
  }
  const auto& params = model->params;
  const std::size_t total = params.trainable_count();
  const auto breakdown = parameter_breakdown(params);
  const long long delta = static_cast<long long>(total) - static_cast<long long>(kReferenceParameterCount);
  const double pct = 100.0 * static_cast<double>(delta) / static_cast<double>(kReferenceParameterCount);
  if (o.json) {
    nlohmann::json j;
    j["parameters"] = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
      j["parameters"].push_back({{"name", params[i].name}, {"shape", params[i].tensor.shape()},
                                 {"count", params[i].tensor.numel()}, {"trainable", params.is_trainable(i)}});
    }
    j["total"] = total;
    j["breakdown"] = breakdown;
    j["config"] = model->config.to_kv();
    if (o.against_reference) {
      j["reference"] = kReferenceParameterCount;
      j["delta"] = delta;
      j["delta_percent"] = pct;
    }
    out << j.dump() << "\n";
    return kOk;
  }
  std::size_t width = 4;
  for (std::size_t i = 0; i < params.size(); ++i) width = std::max(width, params[i].name.size());
  out << std::left << std::setw(static_cast<int>(width) + 2) << "name" << std::setw(16) << "shape" << "count\n";
  for (std::size_t i = 0; i < params.size(); ++i) {
    out << std::left << std::setw(static_cast<int>(width) + 2) << params[i].name << std::setw(16)
        << shape_str(params[i].tensor.shape()) << params[i].tensor.numel()
        << (params.is_trainable(i) ? "" : " (frozen)") << "\n";
  }
  out << "breakdown:\n";
  for (const auto& [module, count] : breakdown) out << "  " << std::setw(12) << module << count << "\n";
  out << "total trainable " << total << "\n";
  if (o.against_reference) {
    out << "reference " << kReferenceParameterCount << " delta " << (delta >= 0 ? "+" : "") << delta << " ("
        << (delta >= 0 ? "+" : "") << fmt1(pct) << "%)\n";
  }
  return kOk;
}

// Writes a synthetic train/dev pair in SQuAD format plus matching vectors.
template <typename T>
int cmd_synth(const RunOptions& o, std::ostream& out, std::ostream&) {
  const std::string dir = o.out_path.empty() ? "." : o.out_path;
  const ResolvedRun run = resolve(o, synthetic::toy_config());
  const auto d = synthetic_data(o, run.seed);
  write_text(dir + "/synthetic_train.json", to_squad_json(d.train).dump() + "\n");
  write_text(dir + "/synthetic_dev.json", to_squad_json(d.dev).dump() + "\n");
  const auto vocab = synthetic_vocab<T>(run.config.word_dim, run.seed);
  std::ostringstream vec;
  vec << std::setprecision(9);
  for (std::size_t i = 2; i < vocab.size(); ++i) {
    vec << vocab.tokens()[i];
    for (std::size_t k = 0; k < vocab.dim(); ++k) vec << ' ' << vocab.rows()[i * vocab.dim() + k];
    vec << '\n';
  }
  write_text(dir + "/synthetic_vectors.txt", vec.str());
  out << "wrote " << d.train.size() << " train and " << d.dev.size() << " dev examples to " << dir << "\n";
  return kOk;
}

template <typename T>
int dispatch(const RunOptions& o, std::ostream& out, std::ostream& err) {
  if (o.command == "train") return cmd_train<T>(o, out, err);
  if (o.command == "eval") return cmd_eval<T>(o, out, err);
  if (o.command == "predict") return cmd_predict<T>(o, out, err);
  if (o.command == "inspect") return cmd_inspect<T>(o, out, err);
  if (o.command == "synth") return cmd_synth<T>(o, out, err);
  err << "unknown command '" << o.command << "'\n";
  return kUsage;
}

}  // namespace detail

/// Runs one command. Errors are reported on `err` and mapped to exit codes.
inline int run_options(const RunOptions& o, std::ostream& out, std::ostream& err) {
  try {
    return o.precision == 64 ? detail::dispatch<double>(o, out, err) : detail::dispatch<float>(o, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"FABIR extractive question answering"};
  app.footer(detail::config_help());
  app.require_subcommand(1);
  RunOptions o;
  std::string cross_axis, selector;
  bool no_char = false, no_conv = false, no_reduction = false;
  std::optional<std::size_t> processing_layers;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key=value config file");
    sub->add_option("--seed", o.seed, "master random seed");
    sub->add_option("--precision", o.precision, "scalar width: 32 or 64")->check(CLI::IsMember({32, 64}));
    sub->add_option("--batch-size", o.batch_size, "examples per batch (default 75)");
    sub->add_flag("--synthetic", o.synthetic, "use the built-in synthetic task instead of data files");
    sub->add_option("--synthetic-train", o.synthetic_train, "synthetic training examples");
    sub->add_option("--synthetic-dev", o.synthetic_dev, "synthetic dev examples");
    sub->add_flag("--json", o.json, "machine-readable output");
  };
  auto add_model = [&](CLI::App* sub) {
    sub->add_flag("--no-char-embed", no_char, "drop the character-level embeddings");
    sub->add_flag("--no-conv-attention", no_conv, "plain multi-head attention without the logit convolution");
    sub->add_flag("--no-reduction-layer", no_reduction, "feedforward reduction instead of the reduction layer");
    sub->add_option("--cross-softmax", cross_axis, "cross-attention softmax axis")->check(CLI::IsMember({"row", "column"}));
    sub->add_option("--selector", selector, "answer selector")->check(CLI::IsMember({"conv", "linear"}));
    sub->add_option("--processing-layers", processing_layers, "number of processing layers");
  };

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  add_model(train);
  train->add_option("--train", o.train_path, "SQuAD-format training file");
  train->add_option("--dev", o.dev_path, "SQuAD-format dev file");
  train->add_option("--vectors", o.vectors_path, "word vector text file");
  train->add_option("--out", o.out_path, "checkpoint to write (default fabir.ckpt)");
  train->add_option("--history", o.history_path, "history file (default <out>.history.jsonl)");
  train->add_option("--resume", o.resume_path, "checkpoint to continue from");
  train->add_option("--epochs", o.epochs, "training epochs");
  train->add_option("--warmup", o.warmup, "learning-rate warmup steps");
  train->add_option("--lr-factor", o.lr_factor, "learning-rate scale factor");
  train->add_option("--target-em", o.target_em, "stop early once dev EM reaches this percentage");
  train->add_flag("--deterministic", o.deterministic, "record zero wall time so history files are reproducible");

  auto* eval = app.add_subcommand("eval", "score a checkpoint or predictions file");
  add_common(eval);
  eval->add_option("--dev", o.dev_path, "SQuAD-format file to score against");
  eval->add_option("--checkpoint", o.checkpoint_path, "model checkpoint");
  eval->add_option("--predictions", o.predictions_path, "id -> answer JSON instead of a checkpoint");
  eval->add_option("--report", o.report_path, "per-example report (default eval_report.json)");

  auto* pred = app.add_subcommand("predict", "write answers for a SQuAD-format file");
  add_common(pred);
  pred->add_option("--input,--dev", o.dev_path, "SQuAD-format input file");
  pred->add_option("--checkpoint", o.checkpoint_path, "model checkpoint");
  pred->add_option("--out", o.out_path, "predictions file (default stdout)");

  auto* inspect = app.add_subcommand("inspect", "print the parameter table");
  add_common(inspect);
  add_model(inspect);
  inspect->add_option("--checkpoint", o.checkpoint_path, "inspect a checkpoint instead of a fresh config");
  inspect->add_option("--vectors", o.vectors_path, "word vector file (frozen table size only)");
  inspect->add_flag("--against-paper", o.against_reference, "print the delta against the published count");

  auto* synth = app.add_subcommand("synth", "write the synthetic task as SQuAD files");
  add_common(synth);
  synth->add_option("--out", o.out_path, "output directory (default .)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  o.command = app.get_subcommands().front()->get_name();
  if (no_char) o.overrides["use_char_embed"] = "false";
  if (no_conv) o.overrides["use_conv_attention"] = "false";
  if (no_reduction) o.overrides["use_reduction_layer"] = "false";
  if (!cross_axis.empty()) o.overrides["cross_softmax_axis"] = cross_axis;
  if (!selector.empty()) o.overrides["selector_kind"] = selector;
  if (processing_layers) o.overrides["n_processing_layers"] = std::to_string(*processing_layers);
  return run_options(o, out, err);
}

}  // namespace fabir::cli

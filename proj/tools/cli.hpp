#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "convtext/convtext.hpp"

namespace convtext::cli {

inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Thrown for bad flag combinations the parser cannot see.
struct UsageError : Error {
  using Error::Error;
};

enum class Precision { F32, F64 };

inline Precision precision_from_env() {
  const char* v = std::getenv("CONVTEXT_PRECISION");
  if (!v || std::string_view(v).empty() || std::string_view(v) == "f64") return Precision::F64;
  if (std::string_view(v) == "f32") return Precision::F32;
  throw UsageError(std::string("CONVTEXT_PRECISION must be f32 or f64, got '") + v + "'");
}

inline constexpr const char* kValFractionKey = "data.val_fraction";

/// Every key a config file may set.
inline std::set<std::string> known_config_keys() {
  std::set<std::string> keys;
  for (const auto& [k, v] : ExtractorConfig{}.to_map()) keys.insert(k);
  for (const auto& [k, v] : TrainConfig{}.to_map()) keys.insert(k);
  keys.insert(kValFractionKey);
  return keys;
}

inline std::map<std::string, std::string> load_config_file(const std::string& path) {
  auto kv = load_key_values(path);
  const auto known = known_config_keys();
  for (const auto& [k, v] : kv) {
    if (!known.count(k)) throw Error(path + ": unknown config key '" + k + "'");
  }
  return kv;
}

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string fmt_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ------------------------------------------------------------------ params

struct ParamsOptions {
  bool all_table3 = false;
  std::string config;
};

inline int cmd_params(const ParamsOptions& o, std::ostream& out) {
  if (o.all_table3 == !o.config.empty()) throw UsageError("params needs exactly one of --all-table3 or --config");
  if (o.all_table3) {
    bool ok = true;
    for (const auto& row : reference_param_table()) {
      out << row.model << "\t" << row.setting << "\t" << row.computed << "\t" << row.expected << "\t"
          << (row.match() ? "MATCH" : "MISMATCH") << "\n";
      ok = ok && row.match();
    }
    return ok ? 0 : kExitFailure;
  }
  ExtractorConfig c;
  c.apply(load_config_file(o.config));
  c.validate_architecture();
  out << "variant\t" << variant_name(c.variant) << "\n";
  if (!is_fasttext(c.variant) && c.variant != Variant::DeepResidualChar) {
    out << "inception\t" << c.inception.str() << "\n";
  }
  out << "params\t" << param_count(c) << "\n";
  out << "embedding_params\t" << embedding_param_count(c) << "\n";
  return 0;
}

// -------------------------------------------------------------- grad-check

struct GradCheckOptions {
  std::string variant;
  std::uint64_t seed = 1;
  bool corrupt = false;
};

inline int cmd_grad_check(const GradCheckOptions& o, std::ostream& out) {
  const Variant v = parse_variant(o.variant);
  const auto cfg = tiny_config(v);
  Model<double> model(cfg, 3, o.seed);
  Rng rng(o.seed);
  const auto input = random_input(cfg, rng);
  const std::size_t label = static_cast<std::size_t>(o.seed % 3);
  const auto report = grad_check(model, input, label, 1e-5, 1e-4, o.corrupt);
  for (const auto& g : report.groups) {
    out << g.name << "\t" << g.entries << "\t" << fmt_g(g.max_rel_error) << "\n";
  }
  out << variant_name(v) << " seed " << o.seed << ": max relative error "
      << fmt_g(report.max_rel_error) << (report.passed ? " PASS" : " FAIL") << "\n";
  return report.passed ? 0 : kExitFailure;
}

// ------------------------------------------------------------------- synth

struct SynthOptions {
  SynthSpec spec;
  std::string out;
};

inline int cmd_synth(const SynthOptions& o, std::ostream& out) {
  const auto data = generate_synth(o.spec);
  save_tsv(o.out, data);
  out << "wrote " << data.size() << " questions to " << o.out << "\n";
  return 0;
}

// ------------------------------------------------------------- build-vocab

struct BuildVocabOptions {
  std::string data;
  std::string out;
  bool chars = false;
};

inline WordVocab vocab_from(const Dataset& data) {
  std::vector<Tokens> corpus;
  corpus.reserve(data.size());
  for (const auto& q : data) corpus.push_back(tokenize(q.text));
  return build_word_vocab(corpus);
}

inline int cmd_build_vocab(const BuildVocabOptions& o, std::ostream& out) {
  if (o.chars) {
    const auto v = build_char_vocab();
    v.save(o.out);
    out << "wrote " << v.size() << " characters to " << o.out << "\n";
    return 0;
  }
  if (o.data.empty()) throw UsageError("build-vocab needs --data (or --chars)");
  const auto v = vocab_from(load_tsv(o.data));
  v.save(o.out);
  out << "wrote " << v.size() << " tokens to " << o.out << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainOptions {
  std::string config, data, val, vocab, out;
  std::optional<std::string> variant;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

inline std::size_t class_count(const Dataset& a, const Dataset& b) {
  std::size_t n = 0;
  for (const auto* d : {&a, &b}) {
    for (const auto& q : *d) n = std::max(n, q.label + 1);
  }
  return n;
}

template <typename Real>
int run_train(const TrainOptions& o, std::ostream& out) {
  // defaults < config file < flags
  std::map<std::string, std::string> kv;
  if (!o.config.empty()) kv = load_config_file(o.config);
  if (o.variant) kv["model.variant"] = *o.variant;
  if (o.epochs) kv["train.epochs"] = std::to_string(*o.epochs);
  if (o.batch_size) kv["train.batch_size"] = std::to_string(*o.batch_size);
  if (o.lr) kv["train.lr"] = fmt_g(*o.lr);
  if (o.seed) kv["train.seed"] = std::to_string(*o.seed);

  ExtractorConfig ec;
  ec.apply(kv);
  TrainConfig tc;
  tc.apply(kv);
  tc.validate();
  double val_fraction = 0.2;
  if (auto it = kv.find(kValFractionKey); it != kv.end()) {
    try {
      val_fraction = std::stod(it->second);
    } catch (const std::exception&) {
      throw Error(std::string("config key ") + kValFractionKey + ": expected a number");
    }
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
      throw Error(std::string(kValFractionKey) + " must be in [0, 1)");
    }
  }

  Dataset train_data, val_data;
  if (o.val.empty()) {
    std::tie(train_data, val_data) = split(load_tsv(o.data), 1.0 - val_fraction, tc.seed);
    if (train_data.empty()) throw Error("split left no training data");
  } else {
    train_data = load_tsv(o.data);
    val_data = load_tsv(o.val);
  }
  const WordVocab words = o.vocab.empty() ? vocab_from(train_data) : WordVocab::load(o.vocab);
  const CharVocab chars = build_char_vocab();
  ec.word_vocab_size = words.size();
  ec.char_vocab_size = chars.size();
  ec.validate();
  const std::size_t classes = class_count(train_data, val_data);
  if (classes < 2) throw Error("training data needs at least two classes");

  namespace fs = std::filesystem;
  fs::create_directories(o.out);
  const fs::path dir(o.out);
  words.save((dir / "vocab.txt").string());

  std::ofstream metrics(dir / "metrics.tsv", std::ios::binary);
  if (!metrics) throw Error("cannot write " + (dir / "metrics.tsv").string());
  metrics << "# convtext training log\n";
  for (const auto& [k, v] : ec.to_map()) metrics << "# " << k << " = " << v << "\n";
  for (const auto& [k, v] : tc.to_map()) metrics << "# " << k << " = " << v << "\n";
  metrics << "# data.train_size = " << train_data.size() << "\n";
  metrics << "# data.val_size = " << val_data.size() << "\n";
  metrics << "# data.classes = " << classes << "\n";
  metrics << "# epoch\tloss\ttrain_accuracy\tval_accuracy\n";

  Model<Real> model(ec, classes, tc.seed);
  const auto train_set = prepare_examples(train_data, words, chars);
  const auto val_set = prepare_examples(val_data, words, chars);
  train(
      model, train_set, val_set, tc,
      [&](const EpochMetrics& m) {
        metrics << format_metrics_line(m) << "\n";
        metrics.flush();
        out << "epoch " << m.epoch << " loss " << fmt_g(m.loss) << " train_acc "
            << fmt_fixed(m.train_accuracy) << " val_acc " << fmt_fixed(m.val_accuracy) << "\n";
      },
      o.threads);
  save_checkpoint((dir / "checkpoint.bin").string(), model);
  out << "wrote " << (dir / "checkpoint.bin").string() << "\n";
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalOptions {
  std::string checkpoint, vocab, data;
  std::size_t threads = 1;
};

template <typename Real>
int run_eval(const EvalOptions& o, std::ostream& out) {
  const auto model = load_checkpoint<Real>(o.checkpoint);
  const auto words = WordVocab::load(o.vocab);
  const auto chars = build_char_vocab();
  const auto& cfg = model.extractor.config();
  if (words.size() != cfg.word_vocab_size) {
    throw Error("vocabulary " + o.vocab + " has " + std::to_string(words.size()) +
                " entries but the checkpoint expects " + std::to_string(cfg.word_vocab_size));
  }
  if (chars.size() != cfg.char_vocab_size) {
    throw Error("checkpoint expects a character vocabulary of " +
                std::to_string(cfg.char_vocab_size) + " entries");
  }
  const auto data = load_tsv(o.data);
  for (const auto& q : data) {
    if (q.label >= model.head.num_classes()) {
      throw Error("label " + std::to_string(q.label) + " exceeds the checkpoint's " +
                  std::to_string(model.head.num_classes()) + " classes");
    }
  }
  const double acc = evaluate(model, prepare_examples(data, words, chars), o.threads);
  out << "examples\t" << data.size() << "\n";
  out << "accuracy\t" << fmt_fixed(acc) << "\n";
  return 0;
}

// -------------------------------------------------------------------- main

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Convolutional question encoders: training, evaluation and checks"};
  app.name("convtext");
  app.require_subcommand(1);

  std::vector<std::string> variant_names;
  for (auto v : kAllVariants) variant_names.emplace_back(variant_name(v));

  ParamsOptions params;
  auto* sp = app.add_subcommand("params", "Print parameter counts");
  sp->add_flag("--all-table3", params.all_table3, "Recompute the reference parameter table");
  sp->add_option("--config", params.config, "Config file (key = value)")->check(CLI::ExistingFile);

  GradCheckOptions gc;
  auto* sg = app.add_subcommand("grad-check", "Finite-difference gradient check at tiny dims");
  sg->add_option("--variant", gc.variant, "Model variant")
      ->required()
      ->check(CLI::IsMember(variant_names));
  sg->add_option("--seed", gc.seed, "Random seed");
  sg->add_flag("--corrupt-gradient", gc.corrupt, "Negate one analytic gradient (must fail)");

  SynthOptions syn;
  auto* ss = app.add_subcommand("synth", "Write the synthetic question corpus as TSV");
  ss->add_option("--seed", syn.spec.seed, "Random seed");
  ss->add_option("--size", syn.spec.size, "Number of questions");
  ss->add_option("--classes", syn.spec.num_classes, "Number of question types");
  ss->add_flag("--order-sensitive", syn.spec.order_sensitive,
               "Make two classes identical as bags of words");
  ss->add_option("--out", syn.out, "Output TSV")->required();

  BuildVocabOptions bv;
  auto* sb = app.add_subcommand("build-vocab", "Build a vocabulary file");
  sb->add_option("--data", bv.data, "Training TSV")->check(CLI::ExistingFile);
  sb->add_option("--out", bv.out, "Output vocabulary file")->required();
  sb->add_flag("--chars", bv.chars, "Write the character vocabulary instead");

  TrainOptions tr;
  auto* st = app.add_subcommand("train", "Train a model");
  st->add_option("--config", tr.config, "Config file (key = value)")->check(CLI::ExistingFile);
  st->add_option("--data", tr.data, "Training TSV")->required()->check(CLI::ExistingFile);
  st->add_option("--val", tr.val, "Validation TSV (default: split off the training data)")
      ->check(CLI::ExistingFile);
  st->add_option("--vocab", tr.vocab, "Word vocabulary (default: built from training data)")
      ->check(CLI::ExistingFile);
  st->add_option("--out", tr.out, "Output directory")->required();
  st->add_option("--variant", tr.variant, "Model variant")->check(CLI::IsMember(variant_names));
  st->add_option("--epochs", tr.epochs, "Epochs");
  st->add_option("--lr", tr.lr, "Learning rate");
  st->add_option("--batch-size", tr.batch_size, "Batch size")->check(CLI::PositiveNumber);
  st->add_option("--seed", tr.seed, "Random seed");
  st->add_option("--threads", tr.threads, "Evaluation threads")->check(CLI::PositiveNumber);

  EvalOptions ev;
  auto* se = app.add_subcommand("eval", "Evaluate a checkpoint");
  se->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  se->add_option("--vocab", ev.vocab, "Word vocabulary")->required()->check(CLI::ExistingFile);
  se->add_option("--data", ev.data, "Labelled TSV")->required()->check(CLI::ExistingFile);
  se->add_option("--threads", ev.threads, "Evaluation threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const Precision precision = precision_from_env();
    if (sp->parsed()) return cmd_params(params, out);
    if (sg->parsed()) return cmd_grad_check(gc, out);
    if (ss->parsed()) return cmd_synth(syn, out);
    if (sb->parsed()) return cmd_build_vocab(bv, out);
    if (st->parsed()) {
      return precision == Precision::F32 ? run_train<float>(tr, out) : run_train<double>(tr, out);
    }
    if (se->parsed()) {
      return precision == Precision::F32 ? run_eval<float>(ev, out) : run_eval<double>(ev, out);
    }
  } catch (const UsageError& e) {
    err << "convtext: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "convtext: error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace convtext::cli

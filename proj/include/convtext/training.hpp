#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "convtext/config.hpp"
#include "convtext/data.hpp"
#include "convtext/error.hpp"
#include "convtext/extractor.hpp"
#include "convtext/model.hpp"
#include "convtext/ops.hpp"
#include "convtext/rng.hpp"
#include "convtext/vocab.hpp"

namespace convtext {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double dropout_rate = 0.5;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw Error("learning rate must be finite and >= 0");
    }
    if (batch_size < 1) throw Error("batch size must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout rate must be in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
      throw Error("invalid Adam hyper-parameters");
    }
  }

  std::map<std::string, std::string> to_map() const {
    char buf[64];
    auto g = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      return std::string(buf);
    };
    return {
        {"train.lr", g(learning_rate)},
        {"train.batch_size", std::to_string(batch_size)},
        {"train.epochs", std::to_string(epochs)},
        {"train.dropout", g(dropout_rate)},
        {"train.seed", std::to_string(seed)},
        {"train.optimizer", optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
        {"train.beta1", g(beta1)},
        {"train.beta2", g(beta2)},
        {"train.epsilon", g(epsilon)},
    };
  }

  void apply(const std::map<std::string, std::string>& kv) {
    auto real = [&](const char* key, double& dst) {
      if (auto it = kv.find(key); it != kv.end()) {
        try {
          std::size_t used = 0;
          dst = std::stod(it->second, &used);
          if (used != it->second.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw Error(std::string("config key ") + key + ": expected a number");
        }
      }
    };
    auto uint = [&](const char* key, auto& dst) {
      if (auto it = kv.find(key); it != kv.end()) {
        try {
          std::size_t used = 0;
          const auto v = std::stoull(it->second, &used);
          if (used != it->second.size() || it->second.front() == '-') {
            throw std::invalid_argument("bad");
          }
          dst = static_cast<std::remove_reference_t<decltype(dst)>>(v);
        } catch (const std::exception&) {
          throw Error(std::string("config key ") + key + ": expected a non-negative integer");
        }
      }
    };
    real("train.lr", learning_rate);
    uint("train.batch_size", batch_size);
    uint("train.epochs", epochs);
    real("train.dropout", dropout_rate);
    uint("train.seed", seed);
    if (auto it = kv.find("train.optimizer"); it != kv.end()) {
      if (it->second == "adam") optimizer = OptimizerKind::Adam;
      else if (it->second == "sgd") optimizer = OptimizerKind::Sgd;
      else throw Error("train.optimizer must be adam or sgd");
    }
    real("train.beta1", beta1);
    real("train.beta2", beta2);
    real("train.epsilon", epsilon);
  }
};

/// A question prepared for the model.
struct Example {
  ModelInput input;
  std::size_t label = 0;
};

inline std::vector<Example> prepare_examples(const Dataset& data, const WordVocab& words,
                                             const CharVocab& chars) {
  std::vector<Example> out;
  out.reserve(data.size());
  for (const auto& q : data) {
    const Tokens t = tokenize(q.text);
    if (t.empty()) throw Error("question has no tokens: '" + q.text + "'");
    out.push_back({encode_input(words, chars, t), q.label});
  }
  return out;
}

/// Pads every example of a batch to the batch's own longest sequences.
inline std::vector<ModelInput> pad_batch(std::span<const Example* const> batch) {
  std::size_t wl = 1, cl = 1, wcl = 1;
  for (const auto* e : batch) {
    wl = std::max(wl, e->input.words.true_length);
    cl = std::max(cl, e->input.chars.true_length);
    for (const auto& wc : e->input.word_chars) wcl = std::max(wcl, wc.true_length);
  }
  std::vector<ModelInput> out;
  out.reserve(batch.size());
  for (const auto* e : batch) out.push_back(pad_input(e->input, wl, cl, wcl));
  return out;
}

// ---------------------------------------------------------------- optimizer

template <typename Real>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  /// params[i] -= update(grads[i]).
  void step(const std::vector<Parameter<Real>*>& params, const Gradients<Real>& grads) {
    if (params.size() != grads.size()) throw Error("optimizer: gradient count mismatch");
    const Real lr = static_cast<Real>(cfg_.learning_rate);
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& v = params[i]->value;
        for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * grads[i][j];
      }
      return;
    }
    if (m_.empty()) {
      for (const auto& g : grads) {
        m_.emplace_back(g.shape());
        v_.emplace_back(g.shape());
      }
    }
    ++t_;
    const Real b1 = static_cast<Real>(cfg_.beta1), b2 = static_cast<Real>(cfg_.beta2);
    const Real c1 = Real(1) - static_cast<Real>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const Real c2 = Real(1) - static_cast<Real>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    const Real eps = static_cast<Real>(cfg_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->value;
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
        v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
        p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor<Real>> m_, v_;
  std::uint64_t t_ = 0;
};

// ----------------------------------------------------------------- training

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0;
  double train_accuracy = 0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0;
};

struct TrainRun {
  std::vector<EpochMetrics> history;
};

/// `epoch<TAB>loss<TAB>train_acc<TAB>val_acc`, 9 significant digits.
inline std::string format_metrics_line(const EpochMetrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g", m.epoch, m.loss, m.train_accuracy,
                m.val_accuracy);
  return buf;
}

template <typename Real>
struct SampleResult {
  Real loss;
  Gradients<Real> grads;  // extractor params then head params
};

/// Loss and gradients of one example. `dropout_rng` null means eval mode.
template <typename Real>
SampleResult<Real> sample_gradients(const Model<Real>& model, const ModelInput& in,
                                    std::size_t label, Rng* dropout_rng, double dropout_rate) {
  ForwardCache<Real> cache;
  const auto rep = model.extractor.forward(in, &cache, dropout_rng, dropout_rate);
  const auto logits = model.head.forward(rep);
  auto ce = softmax_cross_entropy(logits, label);
  auto [grad_rep, head_grads] = model.head.backward(ce.grad, rep);
  SampleResult<Real> r{ce.loss, model.extractor.backward(cache, grad_rep)};
  for (auto& g : head_grads) r.grads.push_back(std::move(g));
  return r;
}

template <typename Real>
Real example_loss(const Model<Real>& model, const ModelInput& in, std::size_t label) {
  return softmax_cross_entropy(model.logits(in), label).loss;
}

/// Fraction of examples whose argmax prediction equals the label. With
/// threads > 1 the examples are split into contiguous chunks.
template <typename Real>
double evaluate(const Model<Real>& model, const std::vector<Example>& data,
                std::size_t threads = 1) {
  if (data.empty()) throw Error("cannot evaluate on an empty dataset");
  threads = std::max<std::size_t>(1, std::min(threads, data.size()));
  std::vector<std::size_t> correct(threads, 0);
  auto work = [&](std::size_t w) {
    const std::size_t begin = data.size() * w / threads, end = data.size() * (w + 1) / threads;
    for (std::size_t i = begin; i < end; ++i) {
      if (model.predict(data[i].input) == data[i].label) ++correct[w];
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  std::size_t total = 0;
  for (auto c : correct) total += c;
  return static_cast<double>(total) / static_cast<double>(data.size());
}

/// Mini-batch training. Batches are drawn from a seeded shuffle, padded to
/// their own longest sentence, and the loss is averaged per batch. After
/// each epoch training and validation accuracy are measured in eval mode,
/// on `eval_threads` threads; the updates themselves are single-threaded.
template <typename Real>
TrainRun train(Model<Real>& model, const std::vector<Example>& train_set,
               const std::vector<Example>& val_set, const TrainConfig& cfg,
               const std::function<void(const EpochMetrics&)>& on_epoch = {},
               std::size_t eval_threads = 1) {
  cfg.validate();
  if (train_set.empty()) throw Error("empty training set");
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& e : *set) {
      if (e.label >= model.head.num_classes()) {
        throw Error("label " + std::to_string(e.label) + " exceeds classifier's " +
                    std::to_string(model.head.num_classes()) + " classes");
      }
    }
  }
  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  Optimizer<Real> opt(cfg);
  TrainRun run;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_set[order[i]]);
      const auto inputs = pad_batch(batch);

      Gradients<Real> total;
      Real batch_loss = 0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        auto r = sample_gradients(model, inputs[b], batch[b]->label,
                                  cfg.dropout_rate > 0 ? &dropout_rng : nullptr, cfg.dropout_rate);
        batch_loss += r.loss;
        if (total.empty()) {
          total = std::move(r.grads);
        } else {
          for (std::size_t i = 0; i < total.size(); ++i) total[i] += r.grads[i];
        }
      }
      const Real inv = Real(1) / static_cast<Real>(batch.size());
      for (auto& g : total) g *= inv;
      loss_sum += static_cast<double>(batch_loss);
      opt.step(model.all_parameters(), total);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(train_set.size());
    m.train_accuracy = evaluate(model, train_set, eval_threads);
    if (!val_set.empty()) m.val_accuracy = evaluate(model, val_set, eval_threads);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return run;
}

// ------------------------------------------------------------------ metrics

/// min(n/3, 1) as the exact fraction numerator/3.
struct ConsensusScore {
  std::size_t matches = 0;
  std::size_t numerator() const { return std::min<std::size_t>(matches, 3); }
  static constexpr std::size_t denominator() { return 3; }
  double value() const { return static_cast<double>(numerator()) / 3.0; }
};

inline std::string normalize_answer(std::string_view s) {
  std::string t = trim(s);
  for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return t;
}

/// VQA consensus accuracy: answers are compared after lowercasing and
/// trimming; n of the ten human answers match.
inline ConsensusScore vqa_consensus_score(std::string_view predicted,
                                          std::span<const std::string> ground_truths) {
  if (ground_truths.size() != 10) {
    throw Error("expected exactly 10 ground-truth answers, got " +
                std::to_string(ground_truths.size()));
  }
  const std::string p = normalize_answer(predicted);
  ConsensusScore s;
  for (const auto& g : ground_truths) {
    if (normalize_answer(g) == p) ++s.matches;
  }
  return s;
}

inline double vqa_consensus_accuracy(std::string_view predicted,
                                     std::span<const std::string> ground_truths) {
  return vqa_consensus_score(predicted, ground_truths).value();
}

// --------------------------------------------------------------- grad check

struct GradCheckGroup {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = true;
};

/// Central differences (f(x+eps) - f(x-eps)) / 2eps for every entry of
/// every tensor, compared with `analytic` using |a-n| / max(|a|,|n|,floor).
inline constexpr double kGradCheckFloor = 1e-6;

inline GradCheckReport check_gradients(const std::vector<std::pair<std::string, Tensor<double>*>>& params,
                                       const Gradients<double>& analytic,
                                       const std::function<double()>& loss, double eps,
                                       double tolerance) {
  if (params.size() != analytic.size()) throw Error("grad check: gradient count mismatch");
  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t g = 0; g < params.size(); ++g) {
    auto& [name, tensor] = params[g];
    tensor->require_same_shape(analytic[g], "grad check");
    GradCheckGroup group{name, tensor->size(), 0.0};
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const double orig = (*tensor)[i];
      (*tensor)[i] = orig + eps;
      const double up = loss();
      (*tensor)[i] = orig - eps;
      const double down = loss();
      (*tensor)[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw Error("grad check: non-finite loss while perturbing " + name);
      }
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[g][i];
      // The floor sits above central-difference roundoff (~1e-16 / eps).
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      group.max_rel_error = std::max(group.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(std::move(group));
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

/// End-to-end check of extractor + head on one example in eval mode.
/// `corrupt` flips the sign of the first group's analytic gradient (a
/// negative control that must fail).
inline GradCheckReport grad_check(Model<double>& model, const ModelInput& input, std::size_t label,
                                  double eps = 1e-5, double tolerance = 1e-4,
                                  bool corrupt = false) {
  auto analytic = sample_gradients<double>(model, input, label, nullptr, 0.0);
  if (!std::isfinite(analytic.loss)) throw Error("grad check: non-finite loss");
  if (corrupt && !analytic.grads.empty()) analytic.grads.front() *= -1.0;
  std::vector<std::pair<std::string, Tensor<double>*>> params;
  for (auto* p : model.all_parameters()) params.emplace_back(p->name, &p->value);
  return check_gradients(params, analytic.grads,
                         [&] { return example_loss(model, input, label); }, eps, tolerance);
}

}  // namespace convtext

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "convtext/convtext.hpp"
#include "oracles.hpp"

using namespace convtext;

namespace {

struct Corpus {
  WordVocab words;
  CharVocab chars = build_char_vocab();
  std::vector<Example> examples;
};

Corpus make_corpus(const Dataset& data) {
  Corpus c;
  std::vector<Tokens> toks;
  for (const auto& q : data) toks.push_back(tokenize(q.text));
  c.words = build_word_vocab(toks);
  c.examples = prepare_examples(data, c.words, c.chars);
  return c;
}

Dataset separable() {
  Dataset d;
  const char* a[] = {"red ball here", "red cup there", "a red car", "red red red", "the red one"};
  const char* b[] = {"blue ball here", "blue cup there", "a blue car", "blue blue", "the blue one"};
  for (int i = 0; i < 5; ++i) {
    d.push_back({a[i], 0, std::nullopt});
    d.push_back({b[i], 1, std::nullopt});
  }
  return d;
}

ExtractorConfig small(Variant v, const Corpus& c) {
  auto cfg = tiny_config(v);
  cfg.word_vocab_size = c.words.size();
  cfg.char_vocab_size = c.chars.size();
  return cfg;
}

std::array<std::string, 10> answers(std::size_t yes) {
  std::array<std::string, 10> a;
  for (std::size_t i = 0; i < 10; ++i) a[i] = i < yes ? "two" : "three";
  return a;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), Error);

  TrainConfig d;
  d.learning_rate = 0.25;
  d.optimizer = OptimizerKind::Sgd;
  d.epochs = 7;
  TrainConfig e;
  e.apply(d.to_map());
  EXPECT_EQ(e.to_map(), d.to_map());
  EXPECT_THROW(e.apply({{"train.optimizer", "rmsprop"}}), Error);
  EXPECT_THROW(e.apply({{"train.epochs", "-3"}}), Error);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  auto c = make_corpus(separable());
  Model<double> m(small(Variant::InceptionWord, c), 2, 3);
  std::vector<Tensor<double>> before;
  for (const auto* p : m.all_parameters()) before.push_back(p->value);
  double initial = 0;
  for (const auto& e : c.examples) initial += example_loss(m, e.input, e.label);
  initial /= static_cast<double>(c.examples.size());

  TrainConfig cfg;
  cfg.learning_rate = 0;
  cfg.epochs = 1;
  cfg.dropout_rate = 0;
  cfg.batch_size = 3;
  const auto run = train(m, c.examples, {}, cfg);
  const auto after = m.all_parameters();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(after[i]->value, before[i]);
  ASSERT_EQ(run.history.size(), 1u);
  EXPECT_NEAR(run.history[0].loss, initial, 1e-12);
  EXPECT_TRUE(std::isnan(run.history[0].val_accuracy));
}

TEST(Train, SeparableSetReachesFullAccuracy) {
  auto c = make_corpus(separable());
  for (auto v : {Variant::InceptionGate, Variant::FastTextWord, Variant::InceptionChar}) {
    Model<double> m(small(v, c), 2, 1);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 50;
    cfg.batch_size = 4;
    cfg.dropout_rate = 0.1;
    const auto run = train(m, c.examples, c.examples, cfg);
    EXPECT_EQ(run.history.size(), 50u);
    EXPECT_EQ(run.history.back().train_accuracy, 1.0) << variant_name(v);
  }
}

TEST(Train, SameSeedSameHistory) {
  auto c = make_corpus(separable());
  auto go = [&] {
    Model<double> m(small(Variant::InceptionGate, c), 2, 5);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.seed = 17;
    std::string log;
    train(m, c.examples, c.examples, cfg,
          [&](const EpochMetrics& e) { log += format_metrics_line(e) + "\n"; });
    std::ostringstream ck;
    save_checkpoint(ck, m);
    return std::make_pair(log, ck.str());
  };
  const auto a = go(), b = go();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, Errors) {
  auto c = make_corpus(separable());
  Model<double> m(small(Variant::FastTextWord, c), 2, 1);
  EXPECT_THROW(train(m, {}, {}, TrainConfig{}), Error);
  auto bad = c.examples;
  bad[0].label = 2;
  EXPECT_THROW(train(m, bad, {}, TrainConfig{}), Error);
}

TEST(Train, SgdStepIsExact) {
  auto c = make_corpus(separable());
  Model<double> m(small(Variant::InceptionGate, c), 2, 8);
  const auto& ex = c.examples[3];
  const auto g = sample_gradients(m, ex.input, ex.label, nullptr, 0.0);
  std::vector<Tensor<double>> before;
  for (const auto* p : m.all_parameters()) before.push_back(p->value);

  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.learning_rate = 0.125;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  cfg.dropout_rate = 0;
  train(m, {ex}, {}, cfg);
  const auto after = m.all_parameters();
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (std::size_t j = 0; j < before[i].size(); ++j) {
      EXPECT_EQ(after[i]->value[j], before[i][j] - 0.125 * g.grads[i][j]);
    }
  }
}

TEST(Train, EqualLogitsGiveLogClasses) {
  auto c = make_corpus(separable());
  Model<double> m(small(Variant::InceptionWord, c), 5, 1);
  for (auto& p : m.head.mutable_parameters()) p.value.fill(0.0);
  for (const auto& e : c.examples) {
    EXPECT_NEAR(example_loss(m, e.input, e.label % 5), std::log(5.0), 1e-12);
  }
}

TEST(Evaluate, Accuracy) {
  auto c = make_corpus(separable());
  Model<double> m(small(Variant::InceptionWord, c), 2, 4);
  auto data = c.examples;
  for (auto& e : data) e.label = m.predict(e.input);
  EXPECT_EQ(evaluate(m, data), 1.0);
  data.resize(4);
  data[3].label = 1 - data[3].label;
  EXPECT_EQ(evaluate(m, data), 0.75);
  EXPECT_EQ(evaluate(m, data, 3), 0.75);
  EXPECT_THROW(evaluate(m, std::vector<Example>{}), Error);
}

TEST(Evaluate, NoRandomness) {
  auto c = make_corpus(separable());
  Model<double> m(small(Variant::DeepResidualChar, c), 2, 4);
  for (const auto& e : c.examples) EXPECT_EQ(m.logits(e.input), m.logits(e.input));
}

TEST(Evaluate, TiesGoToLowestClass) {
  auto c = make_corpus(separable());
  Model<double> m(small(Variant::FastTextWord, c), 4, 1);
  for (auto& p : m.head.mutable_parameters()) p.value.fill(0.0);
  EXPECT_EQ(m.predict(c.examples[0].input), 0u);
}

TEST(Consensus, ExactFractions) {
  const std::size_t expect_num[] = {0, 1, 2, 3, 3, 3};
  for (std::size_t n = 0; n <= 5; ++n) {
    const auto gt = answers(n);
    const auto s = vqa_consensus_score("two", gt);
    EXPECT_EQ(s.matches, n);
    EXPECT_EQ(s.numerator(), expect_num[n]);
    EXPECT_EQ(s.denominator(), 3u);
  }
  EXPECT_EQ(vqa_consensus_accuracy("two", answers(3)), 1.0);
  EXPECT_EQ(vqa_consensus_accuracy("two", answers(0)), 0.0);
  EXPECT_EQ(vqa_consensus_accuracy("two", answers(1)), 1.0 / 3.0);
  EXPECT_EQ(vqa_consensus_accuracy("  TWO ", answers(2)), 2.0 / 3.0);
  std::vector<std::string> nine(9, "two");
  EXPECT_THROW(vqa_consensus_accuracy("two", nine), Error);
}

TEST(GradCheck, NegativeControlAndEmptyGroups) {
  const auto cfg = tiny_config(Variant::InceptionWord);
  Model<double> m(cfg, 3, 1);
  Rng rng(1);
  const auto in = random_input(cfg, rng);
  EXPECT_TRUE(grad_check(m, in, 0).passed);
  EXPECT_FALSE(grad_check(m, in, 0, 1e-5, 1e-4, true).passed);

  const auto empty = check_gradients({}, {}, [] { return 1.0; }, 1e-5, 1e-4);
  EXPECT_TRUE(empty.passed);
  EXPECT_TRUE(empty.groups.empty());

  Tensor<double> x = Tensor<double>::vector({1.0});
  EXPECT_THROW(check_gradients({{"x", &x}}, {Tensor<double>::vector({0.0})},
                               [&] { return std::log(x[0] - 1.0); }, 1e-5, 1e-4),
               Error);
}

TEST(Checkpoint, RoundTrip) {
  for (auto v : kAllVariants) {
    const auto cfg = tiny_config(v);
    Model<double> m(cfg, 4, 2);
    std::stringstream ss;
    save_checkpoint(ss, m);
    const std::string bytes = ss.str();
    const auto loaded = load_checkpoint<double>(ss);
    EXPECT_EQ(loaded.extractor.config(), cfg);
    std::ostringstream again;
    save_checkpoint(again, loaded);
    EXPECT_EQ(again.str(), bytes) << variant_name(v);
    Rng rng(3);
    const auto in = random_input(cfg, rng);
    EXPECT_EQ(loaded.logits(in), m.logits(in));
  }
}

TEST(Checkpoint, RejectsCorruption) {
  Model<double> m(tiny_config(Variant::InceptionWord), 3, 2);
  std::ostringstream os;
  save_checkpoint(os, m);
  const std::string good = os.str();
  std::istringstream bad_magic("not a checkpoint\n");
  EXPECT_THROW(load_checkpoint<double>(bad_magic), Error);
  std::istringstream truncated(good.substr(0, good.size() - 20));
  EXPECT_THROW(load_checkpoint<double>(truncated), Error);
  std::string wrong = good;
  wrong.replace(wrong.find("head.classes = 3"), 16, "head.classes = 4");
  std::istringstream wrong_classes(wrong);
  EXPECT_THROW(load_checkpoint<double>(wrong_classes), Error);
}

TEST(Precision, FloatModelTrains) {
  auto c = make_corpus(separable());
  Model<float> m(small(Variant::InceptionGate, c), 2, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  const auto run = train(m, c.examples, {}, cfg);
  EXPECT_EQ(run.history.back().train_accuracy, 1.0);
}

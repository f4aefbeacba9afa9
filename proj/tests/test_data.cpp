#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "convtext/data.hpp"

using namespace convtext;

namespace {

std::vector<std::string> sorted_words(const std::string& text) {
  auto t = tokenize(text);
  std::sort(t.begin(), t.end());
  return t;
}

}  // namespace

TEST(Tsv, LoadsRecords) {
  std::istringstream is("0\twhat color is it?\n1\thow many dogs?\n");
  const auto d = load_tsv(is);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].label, 0u);
  EXPECT_EQ(d[1].text, "how many dogs?");
  EXPECT_FALSE(d[0].ground_truths.has_value());
}

TEST(Tsv, GroundTruthColumns) {
  std::istringstream is("3\tis it red?\tyes\tyes\tno\tyes\tyes\tyes\tyes\tno\tyes\tyes\n");
  const auto d = load_tsv(is);
  ASSERT_TRUE(d[0].ground_truths.has_value());
  EXPECT_EQ((*d[0].ground_truths)[2], "no");
}

TEST(Tsv, ErrorsNameTheLine) {
  std::istringstream no_tab("0\tok\nbroken line\n");
  try {
    load_tsv(no_tab, "q.tsv");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("q.tsv:2"), std::string::npos) << e.what();
  }
  std::istringstream bad_label("x\tquestion\n");
  EXPECT_THROW(load_tsv(bad_label), Error);
  std::istringstream negative("-1\tquestion\n");
  EXPECT_THROW(load_tsv(negative), Error);
  std::istringstream empty("");
  EXPECT_THROW(load_tsv(empty), Error);
  EXPECT_THROW(load_tsv(std::string("/nonexistent/file.tsv")), Error);
}

TEST(Tsv, RoundTrip) {
  Dataset d = generate_synth({3, 40, 6, false});
  d[0].ground_truths = std::array<std::string, 10>{"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  std::stringstream ss;
  save_tsv(ss, d);
  EXPECT_EQ(load_tsv(ss), d);
}

TEST(Synth, SizeClassesAndDeterminism) {
  const auto d = generate_synth({7, 600, 6, false});
  EXPECT_EQ(d.size(), 600u);
  std::map<std::size_t, std::size_t> counts;
  for (const auto& q : d) ++counts[q.label];
  EXPECT_EQ(counts.size(), 6u);
  for (const auto& [label, n] : counts) EXPECT_GE(n, 1u);
  EXPECT_EQ(generate_synth({7, 600, 6, false}), d);
  EXPECT_NE(generate_synth({8, 600, 6, false}), d);
}

TEST(Synth, QuestionLengths) {
  for (bool order : {false, true}) {
    for (const auto& q : generate_synth({5, 300, 6, order})) {
      std::size_t words = 0;
      for (const auto& t : tokenize(q.text)) words += t != "?";
      EXPECT_GE(words, 4u) << q.text;
      EXPECT_LE(words, 10u) << q.text;
    }
  }
}

TEST(Synth, PrefixesIdentifyClasses) {
  const auto& prefixes = synth_class_prefixes();
  for (const auto& q : generate_synth({9, 120, 6, false})) {
    EXPECT_EQ(q.text.rfind(prefixes[q.label], 0), 0u) << q.text;
  }
}

TEST(Synth, OrderSensitivePairsShareBagOfWords) {
  const auto d = generate_synth({7, 750, 6, true});
  for (std::size_t g = 0; g + 6 <= d.size(); g += 6) {
    ASSERT_EQ(d[g + 2].label, 2u);
    ASSERT_EQ(d[g + 5].label, 5u);
    EXPECT_EQ(sorted_words(d[g + 2].text), sorted_words(d[g + 5].text));
    EXPECT_NE(tokenize(d[g + 2].text), tokenize(d[g + 5].text));
  }
}

TEST(Synth, InvalidSpecs) {
  EXPECT_THROW(generate_synth({1, 10, 1, false}), Error);
  EXPECT_THROW(generate_synth({1, 10, 7, false}), Error);
  EXPECT_THROW(generate_synth({1, 3, 6, false}), Error);
  EXPECT_THROW(generate_synth({1, 100, 4, true}), Error);
}

TEST(Split, SizesAndCoverage) {
  const auto d = generate_synth({1, 100, 5, false});
  const auto [tr, va] = split(d, 0.8, 3);
  EXPECT_EQ(tr.size(), 80u);
  EXPECT_EQ(va.size(), 20u);
  auto key = [](const LabeledQuestion& q) { return std::to_string(q.label) + "\t" + q.text; };
  std::vector<std::string> all, parts;
  for (const auto& q : d) all.push_back(key(q));
  for (const auto& q : tr) parts.push_back(key(q));
  for (const auto& q : va) parts.push_back(key(q));
  std::sort(all.begin(), all.end());
  std::sort(parts.begin(), parts.end());
  EXPECT_EQ(all, parts);

  const auto [full, none] = split(d, 1.0, 3);
  EXPECT_EQ(full.size(), 100u);
  EXPECT_TRUE(none.empty());
  EXPECT_EQ(split(d, 0.8, 3), split(d, 0.8, 3));
  EXPECT_THROW(split(d, 1.5, 3), Error);
}

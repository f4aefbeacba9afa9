#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "convtext/error.hpp"
#include "convtext/rng.hpp"
#include "convtext/vocab.hpp"

namespace convtext {

struct LabeledQuestion {
  std::string text;
  std::size_t label = 0;
  std::optional<std::array<std::string, 10>> ground_truths;

  friend bool operator==(const LabeledQuestion&, const LabeledQuestion&) = default;
};

using Dataset = std::vector<LabeledQuestion>;

/// Reads `label<TAB>question` lines. Ten further TAB-separated columns, when
/// present, are the human ground-truth answers.
inline Dataset load_tsv(std::istream& is, const std::string& source = "<stream>") {
  Dataset out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto where = [&] { return source + ":" + std::to_string(lineno) + ": "; };
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 2) throw Error(where() + "missing TAB between label and question");
    if (cols.size() != 2 && cols.size() != 12) {
      throw Error(where() + "expected 2 or 12 columns, found " + std::to_string(cols.size()));
    }
    const std::string& label = cols[0];
    if (label.empty() || label.size() > 9 ||
        !std::all_of(label.begin(), label.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw Error(where() + "label '" + label + "' is not a non-negative integer");
    }
    LabeledQuestion q;
    q.label = std::stoul(label);
    q.text = cols[1];
    if (cols.size() == 12) {
      std::array<std::string, 10> gt;
      std::copy(cols.begin() + 2, cols.end(), gt.begin());
      q.ground_truths = std::move(gt);
    }
    out.push_back(std::move(q));
  }
  if (out.empty()) throw Error(source + ": empty file");
  return out;
}

inline Dataset load_tsv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return load_tsv(is, path);
}

inline void save_tsv(std::ostream& os, const Dataset& data) {
  for (const auto& q : data) {
    if (q.text.find_first_of("\t\n") != std::string::npos) {
      throw Error("question text contains TAB or newline: " + q.text);
    }
    os << q.label << '\t' << q.text;
    if (q.ground_truths) {
      for (const auto& a : *q.ground_truths) os << '\t' << a;
    }
    os << '\n';
  }
}

inline void save_tsv(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  save_tsv(os, data);
}

/// Question-type labels used by the synthetic generator, in label order.
inline const std::vector<std::string>& synth_class_prefixes() {
  static const std::vector<std::string> p = {"what color", "how many",   "is the",
                                             "what animal", "what sport", "is there"};
  return p;
}

struct SynthSpec {
  std::uint64_t seed = 7;
  std::size_t size = 750;
  std::size_t num_classes = 6;
  /// Classes 2 ("is the") and 5 ("is there") become bag-of-words twins.
  bool order_sensitive = false;

  void validate() const {
    const std::size_t max_classes = synth_class_prefixes().size();
    if (num_classes < 2 || num_classes > max_classes) {
      throw Error("synthetic corpus supports 2.." + std::to_string(max_classes) + " classes");
    }
    if (size < num_classes) throw Error("synthetic corpus size must be >= num_classes");
    if (order_sensitive && num_classes != max_classes) {
      throw Error("order-sensitive corpus needs all " + std::to_string(max_classes) + " classes");
    }
  }
};

namespace detail {

struct SynthWords {
  std::vector<std::string> nouns = {
      "dog",    "cat",    "man",    "woman", "boy",    "girl",   "car",    "van",
      "train",  "truck",  "bike",   "table", "chair",  "bed",    "couch",  "plate",
      "cup",    "bowl",   "horse",  "sheep", "cow",    "bird",   "kite",   "clock",
      "sign",   "tree",   "window", "door",  "laptop", "phone",  "bench",  "pizza"};
  std::vector<std::string> adjectives = {"red",   "blue",   "green", "white", "black",
                                         "small", "large",  "old",   "young", "wooden",
                                         "brown", "yellow", "empty", "tall",  "round"};
  std::vector<std::string> prepositions = {"on",    "under", "near",   "behind",
                                           "above", "below", "beside", "inside"};
  std::vector<std::string> locations = {"street", "field", "kitchen", "beach", "park",
                                        "room",   "road",  "yard",    "water", "snow",
                                        "grass",  "sky",   "floor",   "wall",  "court"};
  std::vector<std::string> people = {"player", "child", "athlete", "person",
                                     "kid",    "guy",   "lady",    "team"};
};

inline std::string join_words(const std::vector<std::string>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i && w[i] != "?") s += ' ';
    s += w[i];
  }
  return s;
}

}  // namespace detail

/// Template-filled questions. Item i has class i % num_classes, so every
/// class appears once `size >= num_classes`. In order-sensitive mode the
/// class-2 and class-5 items of each group share one set of sampled words
/// and differ only in word order.
inline Dataset generate_synth(const SynthSpec& spec) {
  spec.validate();
  const detail::SynthWords w;
  Rng rng(spec.seed);
  Dataset out;
  out.reserve(spec.size);

  struct Slots {
    std::string noun, noun2, adj, prep, loc, person;
  };
  Slots shared;
  for (std::size_t i = 0; i < spec.size; ++i) {
    const std::size_t cls = i % spec.num_classes;
    Slots s{rng.pick(w.nouns), rng.pick(w.nouns),        rng.pick(w.adjectives),
            rng.pick(w.prepositions), rng.pick(w.locations), rng.pick(w.people)};
    std::vector<std::string> q;
    const bool alt = rng.below(2) == 1;
    switch (cls) {
      case 0:
        if (alt) q = {"what", "color", "is", "the", s.noun, s.prep, "the", s.noun2, "?"};
        else q = {"what", "color", "is", "the", s.adj, s.noun, "?"};
        break;
      case 1:
        q = {"how", "many", s.noun + "s", "are", s.prep, "the", s.adj, s.noun2, "?"};
        break;
      case 2:
        if (spec.order_sensitive) {
          shared = s;
          q = {"is", "the", s.noun2, s.prep, "a", s.adj, s.noun, "there", "?"};
        } else {
          q = {"is", "the", s.adj, s.noun, s.prep, "the", s.noun2, "?"};
        }
        break;
      case 3:
        q = {"what", "animal", "is", s.prep, "the", s.adj, s.noun2, "?"};
        break;
      case 4:
        if (alt) q = {"what", "sport", "is", "the", s.person, "playing", "?"};
        else q = {"what", "sport", "is", "the", s.adj, s.person, "playing", "in", "the", s.loc};
        break;
      case 5: {
        const Slots& t = spec.order_sensitive ? shared : s;
        q = {"is", "there", "a", t.adj, t.noun, t.prep, "the", t.noun2, "?"};
        break;
      }
    }
    out.push_back({detail::join_words(q), cls, std::nullopt});
  }
  return out;
}

/// Deterministic shuffle, then the first round(fraction * n) items train.
inline std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("split fraction must be in [0, 1]");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::pair<Dataset, Dataset> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(data[order[i]]);
  }
  return out;
}

}  // namespace convtext

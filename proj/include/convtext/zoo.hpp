#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "convtext/config.hpp"
#include "convtext/extractor.hpp"
#include "convtext/rng.hpp"
#include "convtext/vocab.hpp"

namespace convtext {

/// Word vocabulary size used for the reference parameter table (content
/// tokens only; PAD and UNK are added on top).
inline constexpr std::size_t kReferenceWordVocab = 13321;
inline constexpr std::size_t kReferenceCharVocab = 45;

struct ParamTableRow {
  std::string model;
  std::string setting;
  std::uint64_t computed = 0;
  std::uint64_t expected = 0;
  bool match() const { return computed == expected; }
};

/// The four rows of the reference parameter-count table, recomputed.
inline std::vector<ParamTableRow> reference_param_table() {
  auto cfg = [](Variant v) {
    auto c = ExtractorConfig::for_variant(v);
    c.embed_dim = 300;
    c.word_vocab_size = kReferenceWordVocab + 2;
    return c;
  };
  return {
      {"LSTM (baseline)", "2 layers, input 300, hidden 1024", lstm_param_count(300, 1024, 2),
       13819904},
      {"CNN Non-Inception", "3(2048), d=300", param_count(cfg(Variant::NonInception)), 1845248},
      {"CNN Inception (word)", "2(512)+3(512)+4(512)+5(512), d=300",
       param_count(cfg(Variant::InceptionWord)), 2152448},
      {"CNN Inception + Gate", "2(512)+3(512)+4(512)+5(512), d=300",
       param_count(cfg(Variant::InceptionGate)), 4304896},
  };
}

/// Reduced dimensions for gradient checks: d = 8, at most two branches of
/// four channels, small vocabularies.
inline ExtractorConfig tiny_config(Variant v) {
  ExtractorConfig c = ExtractorConfig::for_variant(v);
  c.embed_dim = 8;
  c.char_embed_dim = 4;
  c.char_word_dim = 4;
  c.deep_channels = 4;
  c.word_vocab_size = 12;
  c.char_vocab_size = 10;
  c.char_inception = InceptionSpec::parse("2(2)+3(2)");
  switch (v) {
    case Variant::NonInception: c.inception = InceptionSpec::parse("3(4)"); break;
    case Variant::InceptionBottleneck: c.inception = InceptionSpec::parse("3(4)+5(4)"); break;
    default: c.inception = InceptionSpec::parse("2(4)+3(4)"); break;
  }
  return c;
}

namespace detail {

inline EncodedSentence random_sentence(std::size_t vocab, std::size_t true_len,
                                       std::size_t padded_len, Rng& rng) {
  std::vector<std::size_t> idx(true_len);
  for (auto& i : idx) i = 1 + rng.below(vocab - 1);  // UNK allowed, PAD not
  EncodedSentence s;
  s.true_length = true_len;
  idx.resize(padded_len, kPadIndex);
  s.indices = std::move(idx);
  s.mask.assign(padded_len, false);
  std::fill_n(s.mask.begin(), true_len, true);
  return s;
}

}  // namespace detail

/// Random input consistent with `config`'s vocabulary sizes. Sequences have
/// between 2 and max_len - 1 real positions and are padded to max_len.
inline ModelInput random_input(const ExtractorConfig& config, Rng& rng, std::size_t max_len = 6) {
  ModelInput in;
  const std::size_t wv = std::max<std::size_t>(config.word_vocab_size, 3);
  const std::size_t cv = std::max<std::size_t>(config.char_vocab_size, 3);
  const std::size_t words = 2 + rng.below(max_len - 2);
  in.words = detail::random_sentence(wv, words, max_len, rng);
  in.chars = detail::random_sentence(cv, 2 + rng.below(max_len - 2), max_len, rng);
  for (std::size_t i = 0; i < words; ++i) {
    in.word_chars.push_back(detail::random_sentence(cv, 1 + rng.below(max_len - 1), max_len, rng));
  }
  return in;
}

}  // namespace convtext

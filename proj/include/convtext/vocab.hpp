#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "convtext/error.hpp"

namespace convtext {

using Tokens = std::vector<std::string>;
using Mask = std::vector<bool>;

inline constexpr std::size_t kPadIndex = 0;
inline constexpr std::size_t kUnkIndex = 1;
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// 18 ASCII marks; with 26 letters and space this gives 45 characters.
inline constexpr std::string_view kDefaultPunctuation = "!\"#$%&'(),-./:;?@_";

/// Lowercases ASCII, splits on whitespace and emits every ASCII punctuation
/// mark as its own token. Bytes >= 0x80 are kept inside words.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

/// Splits a UTF-8 string into code points (each returned as its byte string).
/// Invalid lead bytes are returned as single bytes.
inline Tokens utf8_chars(std::string_view s) {
  Tokens out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

struct WordTag {};
struct CharTag {};

/// Token <-> index map. Index 0 is `<pad>`, index 1 is `<unk>`, content
/// tokens start at 2 in insertion order.
template <typename Tag>
class BasicVocab {
 public:
  BasicVocab() : index_to_token_{std::string(kPadToken), std::string(kUnkToken)} {
    token_to_index_.emplace(kPadToken, kPadIndex);
    token_to_index_.emplace(kUnkToken, kUnkIndex);
  }

  /// Adds `token` if unseen; returns its index either way.
  std::size_t add(const std::string& token) {
    auto [it, inserted] = token_to_index_.emplace(token, index_to_token_.size());
    if (inserted) index_to_token_.push_back(token);
    return it->second;
  }

  bool contains(const std::string& token) const { return token_to_index_.count(token) > 0; }

  /// Index of `token`, or the UNK index when absent.
  std::size_t index(const std::string& token) const {
    auto it = token_to_index_.find(token);
    return it == token_to_index_.end() ? kUnkIndex : it->second;
  }

  const std::string& token(std::size_t index) const {
    if (index >= index_to_token_.size()) {
      throw Error("vocabulary index " + std::to_string(index) + " out of range");
    }
    return index_to_token_[index];
  }

  std::size_t size() const { return index_to_token_.size(); }
  std::size_t content_size() const { return index_to_token_.size() - 2; }
  std::size_t pad_index() const { return kPadIndex; }
  std::size_t unk_index() const { return kUnkIndex; }
  const std::vector<std::string>& tokens() const { return index_to_token_; }

  /// One token per line; line number is the index.
  void save(std::ostream& os) const {
    for (const auto& t : index_to_token_) os << t << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write vocabulary file " + path);
    save(os);
  }

  static BasicVocab load(std::istream& is) {
    BasicVocab v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      if (lineno == 0 && line != kPadToken) throw Error("vocabulary line 0 must be <pad>");
      if (lineno == 1 && line != kUnkToken) throw Error("vocabulary line 1 must be <unk>");
      if (lineno >= 2) {
        if (v.contains(line)) {
          throw Error("duplicate vocabulary token on line " + std::to_string(lineno));
        }
        v.add(line);
      }
      ++lineno;
    }
    if (lineno < 2) throw Error("vocabulary file is missing <pad>/<unk> lines");
    return v;
  }

  static BasicVocab load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open vocabulary file " + path);
    return load(is);
  }

  friend bool operator==(const BasicVocab& a, const BasicVocab& b) {
    return a.index_to_token_ == b.index_to_token_;
  }

 private:
  std::unordered_map<std::string, std::size_t> token_to_index_;
  std::vector<std::string> index_to_token_;
};

using WordVocab = BasicVocab<WordTag>;
using CharVocab = BasicVocab<CharTag>;

/// Padded index sequence. mask[i] is true exactly for i < true_length.
struct EncodedSentence {
  std::vector<std::size_t> indices;
  std::size_t true_length = 0;
  Mask mask;

  std::size_t padded_length() const { return indices.size(); }
  friend bool operator==(const EncodedSentence&, const EncodedSentence&) = default;
};

/// Builds a word vocabulary in first-appearance order.
inline WordVocab build_word_vocab(const std::vector<Tokens>& corpus) {
  if (corpus.empty()) throw Error("empty corpus");
  WordVocab v;
  for (const auto& sentence : corpus) {
    for (const auto& t : sentence) v.add(t);
  }
  return v;
}

/// Lowercase letters, then space, then `punctuation` in the given order.
inline CharVocab build_char_vocab(std::string_view punctuation = kDefaultPunctuation) {
  CharVocab v;
  for (char c = 'a'; c <= 'z'; ++c) v.add(std::string(1, c));
  v.add(" ");
  std::unordered_set<char> seen;
  for (char c : punctuation) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalpha(u) || c == ' ') {
      throw Error(std::string("punctuation list contains letter or space '") + c + "'");
    }
    if (!seen.insert(c).second) {
      throw Error(std::string("duplicate character '") + c + "' in punctuation list");
    }
    v.add(std::string(1, c));
  }
  return v;
}

namespace detail {

inline EncodedSentence pad_or_crop(std::vector<std::size_t> idx, std::size_t target_length) {
  if (target_length < 1) throw Error("target length must be >= 1");
  if (idx.empty()) throw Error("empty sentence");
  EncodedSentence s;
  s.true_length = std::min(idx.size(), target_length);
  idx.resize(target_length, kPadIndex);
  s.indices = std::move(idx);
  s.mask.assign(target_length, false);
  std::fill_n(s.mask.begin(), s.true_length, true);
  return s;
}

}  // namespace detail

/// Maps tokens to indices (UNK for unknown), crops from the right or pads
/// with PAD to `target_length`.
inline EncodedSentence encode_words(const WordVocab& vocab, const Tokens& tokens,
                                    std::size_t target_length) {
  std::vector<std::size_t> idx;
  idx.reserve(tokens.size());
  for (const auto& t : tokens) idx.push_back(vocab.index(t));
  return detail::pad_or_crop(std::move(idx), target_length);
}

/// Character sequence of a single word, with the same crop/pad contract.
inline EncodedSentence encode_chars(const CharVocab& vocab, std::string_view word,
                                    std::size_t target_length) {
  std::vector<std::size_t> idx;
  for (const auto& c : utf8_chars(word)) idx.push_back(vocab.index(c));
  return detail::pad_or_crop(std::move(idx), target_length);
}

/// Re-pads an encoded sentence to a new length without cropping valid
/// positions away unless `target_length` is shorter than true_length.
inline EncodedSentence repad(const EncodedSentence& s, std::size_t target_length) {
  std::vector<std::size_t> idx(s.indices.begin(), s.indices.begin() + s.true_length);
  return detail::pad_or_crop(std::move(idx), target_length);
}

}  // namespace convtext

#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "convtext/error.hpp"

namespace convtext {

/// One inception branch: kernel width and number of output feature maps.
/// Renders as "width(out_channels)".
struct KernelSpec {
  std::size_t width = 3;
  std::size_t out_channels = 1;

  std::string str() const {
    return std::to_string(width) + "(" + std::to_string(out_channels) + ")";
  }
  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

struct InceptionSpec {
  std::vector<KernelSpec> branches;

  std::size_t out_channels() const {
    std::size_t n = 0;
    for (const auto& b : branches) n += b.out_channels;
    return n;
  }

  std::string str() const {
    std::string s;
    for (std::size_t i = 0; i < branches.size(); ++i) s += (i ? "+" : "") + branches[i].str();
    return s;
  }

  /// Parses "2(512)+3(512)+4(512)+5(512)". Whitespace is ignored.
  static InceptionSpec parse(std::string_view text) {
    std::string s;
    for (char c : text) {
      if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
    }
    InceptionSpec spec;
    std::size_t pos = 0;
    auto fail = [&] { return Error("malformed kernel setting '" + std::string(text) + "'"); };
    auto read_uint = [&]() -> std::size_t {
      std::size_t start = pos;
      while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
      if (pos == start || pos - start > 9) throw fail();
      return std::stoul(s.substr(start, pos - start));
    };
    while (true) {
      KernelSpec k;
      k.width = read_uint();
      if (pos >= s.size() || s[pos] != '(') throw fail();
      ++pos;
      k.out_channels = read_uint();
      if (pos >= s.size() || s[pos] != ')') throw fail();
      ++pos;
      if (k.width < 1 || k.out_channels < 1) {
        throw Error("kernel width and channel count must be >= 1 in '" + std::string(text) + "'");
      }
      spec.branches.push_back(k);
      if (pos == s.size()) break;
      if (s[pos] != '+') throw fail();
      ++pos;
    }
    return spec;
  }

  friend bool operator==(const InceptionSpec&, const InceptionSpec&) = default;
};

enum class Variant {
  NonInception,
  InceptionWord,
  InceptionResidual,
  InceptionBottleneck,
  InceptionGateTanh,
  InceptionGate,
  InceptionChar,
  DeepResidualChar,
  InceptionCharWord,
  FastTextWord,
  FastTextCharWord,
};

inline constexpr Variant kAllVariants[] = {
    Variant::NonInception,      Variant::InceptionWord,     Variant::InceptionResidual,
    Variant::InceptionBottleneck, Variant::InceptionGateTanh, Variant::InceptionGate,
    Variant::InceptionChar,     Variant::DeepResidualChar,  Variant::InceptionCharWord,
    Variant::FastTextWord,      Variant::FastTextCharWord,
};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::NonInception: return "NonInception";
    case Variant::InceptionWord: return "InceptionWord";
    case Variant::InceptionResidual: return "InceptionResidual";
    case Variant::InceptionBottleneck: return "InceptionBottleneck";
    case Variant::InceptionGateTanh: return "InceptionGateTanh";
    case Variant::InceptionGate: return "InceptionGate";
    case Variant::InceptionChar: return "InceptionChar";
    case Variant::DeepResidualChar: return "DeepResidualChar";
    case Variant::InceptionCharWord: return "InceptionCharWord";
    case Variant::FastTextWord: return "FastTextWord";
    case Variant::FastTextCharWord: return "FastTextCharWord";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw Error("unknown variant '" + std::string(name) + "'");
}

inline bool uses_words(Variant v) {
  return v != Variant::InceptionChar && v != Variant::DeepResidualChar;
}
inline bool uses_sentence_chars(Variant v) {
  return v == Variant::InceptionChar || v == Variant::DeepResidualChar;
}
inline bool uses_word_chars(Variant v) {
  return v == Variant::InceptionCharWord || v == Variant::FastTextCharWord;
}
inline bool is_fasttext(Variant v) {
  return v == Variant::FastTextWord || v == Variant::FastTextCharWord;
}

/// Kernel setting each variant uses when none is given.
inline InceptionSpec default_inception(Variant v) {
  switch (v) {
    case Variant::NonInception: return InceptionSpec::parse("3(2048)");
    case Variant::InceptionResidual: return InceptionSpec::parse("1(512)+3(512)+5(512)+7(512)");
    case Variant::InceptionBottleneck: return InceptionSpec::parse("3(1024)+5(1024)");
    default: return InceptionSpec::parse("2(512)+3(512)+4(512)+5(512)");
  }
}

/// Declarative architecture description.
///
/// `embed_dim` is the width of each word position fed to the main
/// convolution. For the char+word variants it is split into a word-table
/// part (embed_dim - char_word_dim) and a character-derived part
/// (char_word_dim). `char_embed_dim` is the character table width for the
/// char CNNs; FastTextCharWord averages a char table of width char_word_dim.
struct ExtractorConfig {
  Variant variant = Variant::InceptionGate;
  std::size_t embed_dim = 300;
  std::size_t char_embed_dim = 16;
  std::size_t char_word_dim = 150;
  InceptionSpec inception = default_inception(Variant::InceptionGate);
  InceptionSpec char_inception = InceptionSpec::parse("2(64)+3(64)+4(64)+5(64)");
  std::size_t deep_channels = 256;
  std::size_t word_vocab_size = 0;  // total rows, PAD/UNK included
  std::size_t char_vocab_size = 0;

  static ExtractorConfig for_variant(Variant v) {
    ExtractorConfig c;
    c.variant = v;
    c.inception = default_inception(v);
    return c;
  }

  std::size_t word_table_dim() const {
    return uses_word_chars(variant) ? embed_dim - char_word_dim : embed_dim;
  }

  std::size_t char_table_dim() const {
    if (variant == Variant::FastTextCharWord) return char_word_dim;
    return uses_sentence_chars(variant) || uses_word_chars(variant) ? char_embed_dim : 0;
  }

  std::size_t output_dim() const {
    if (is_fasttext(variant)) return embed_dim;
    if (variant == Variant::DeepResidualChar) return deep_channels;
    return inception.out_channels();
  }

  /// Full check, vocabulary sizes included.
  void validate() const {
    validate_architecture();
    auto bad = [&](const std::string& m) {
      return Error(std::string(variant_name(variant)) + ": " + m);
    };
    if (uses_words(variant) && word_vocab_size < 3) {
      throw bad("word vocabulary size must be >= 3 (PAD, UNK and one token)");
    }
    if ((uses_sentence_chars(variant) || uses_word_chars(variant)) && char_vocab_size < 3) {
      throw bad("char vocabulary size must be >= 3");
    }
  }

  void validate_architecture() const {
    auto bad = [&](const std::string& m) {
      return Error(std::string(variant_name(variant)) + ": " + m);
    };
    if (embed_dim < 1) throw bad("embed_dim must be >= 1");
    if (!is_fasttext(variant) && variant != Variant::DeepResidualChar) {
      if (inception.branches.empty()) throw bad("inception needs at least one branch");
    }
    switch (variant) {
      case Variant::NonInception:
        if (inception.branches.size() != 1) throw bad("exactly one kernel required");
        break;
      case Variant::InceptionBottleneck:
        for (const auto& b : inception.branches) {
          if (b.out_channels % 4 != 0) {
            throw bad("bottleneck branch " + b.str() + " needs channels divisible by 4");
          }
        }
        break;
      case Variant::InceptionChar:
      case Variant::DeepResidualChar:
        if (char_embed_dim < 1) throw bad("char_embed_dim must be >= 1");
        if (variant == Variant::DeepResidualChar && deep_channels < 1) {
          throw bad("deep_channels must be >= 1");
        }
        break;
      case Variant::InceptionCharWord:
        if (char_inception.branches.empty()) throw bad("char inception needs a branch");
        [[fallthrough]];
      case Variant::FastTextCharWord:
        if (char_word_dim < 1 || char_word_dim >= embed_dim) {
          throw bad("word and char halves must both be >= 1 and sum to embed_dim");
        }
        if (variant == Variant::InceptionCharWord && char_embed_dim < 1) {
          throw bad("char_embed_dim must be >= 1");
        }
        break;
      default: break;
    }
  }

  /// Flat `key = value` lines, in a fixed order.
  std::map<std::string, std::string> to_map() const {
    return {
        {"model.variant", std::string(variant_name(variant))},
        {"model.embed_dim", std::to_string(embed_dim)},
        {"inception.branches", inception.str()},
        {"char.embed_dim", std::to_string(char_embed_dim)},
        {"char.word_dim", std::to_string(char_word_dim)},
        {"char.inception.branches", char_inception.str()},
        {"deep.channels", std::to_string(deep_channels)},
        {"vocab.word_size", std::to_string(word_vocab_size)},
        {"vocab.char_size", std::to_string(char_vocab_size)},
    };
  }

  /// Applies recognised keys from `kv`; unrelated keys are left alone.
  /// Setting model.variant without inception.branches resets the kernel
  /// setting to that variant's default.
  void apply(const std::map<std::string, std::string>& kv) {
    auto num = [&](const std::string& key, std::size_t& dst) {
      auto it = kv.find(key);
      if (it == kv.end()) return;
      try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        dst = static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        throw Error("config key " + key + ": expected a non-negative integer, got '" +
                    it->second + "'");
      }
    };
    if (auto it = kv.find("model.variant"); it != kv.end()) {
      variant = parse_variant(it->second);
      inception = default_inception(variant);
    }
    num("model.embed_dim", embed_dim);
    if (auto it = kv.find("inception.branches"); it != kv.end()) {
      inception = InceptionSpec::parse(it->second);
    }
    num("char.embed_dim", char_embed_dim);
    num("char.word_dim", char_word_dim);
    if (auto it = kv.find("char.inception.branches"); it != kv.end()) {
      char_inception = InceptionSpec::parse(it->second);
    }
    num("deep.channels", deep_channels);
    num("vocab.word_size", word_vocab_size);
    num("vocab.char_size", char_vocab_size);
  }

  friend bool operator==(const ExtractorConfig&, const ExtractorConfig&) = default;
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
inline std::map<std::string, std::string> parse_key_values(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw Error("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config file " + path);
  return parse_key_values(is);
}

// ----------------------------------------------------------- param counts

namespace detail {

inline std::uint64_t conv_params(std::uint64_t width, std::uint64_t in, std::uint64_t out) {
  return width * in * out + out;
}

inline std::uint64_t inception_params(const InceptionSpec& s, std::uint64_t in) {
  std::uint64_t n = 0;
  for (const auto& b : s.branches) n += conv_params(b.width, in, b.out_channels);
  return n;
}

}  // namespace detail

/// Closed-form count of the feature extractor's weights and biases.
/// Embedding tables are excluded (see embedding_param_count).
inline std::uint64_t param_count(const ExtractorConfig& c) {
  c.validate_architecture();
  using detail::conv_params;
  using detail::inception_params;
  const std::uint64_t d = c.embed_dim;
  switch (c.variant) {
    case Variant::NonInception:
    case Variant::InceptionWord:
      return inception_params(c.inception, d);
    case Variant::InceptionGateTanh:
    case Variant::InceptionGate:
      return 2 * inception_params(c.inception, d);
    case Variant::InceptionResidual:
      return inception_params(c.inception, d) +
             inception_params(c.inception, c.inception.out_channels());
    case Variant::InceptionBottleneck: {
      std::uint64_t n = 0;
      for (const auto& b : c.inception.branches) {
        const std::uint64_t r = b.out_channels / 4;
        n += conv_params(1, d, r) + conv_params(b.width, r, r) + conv_params(1, r, b.out_channels);
      }
      return n;
    }
    case Variant::InceptionChar:
      return inception_params(c.inception, c.char_embed_dim);
    case Variant::DeepResidualChar: {
      const std::uint64_t ch = c.deep_channels;
      return conv_params(3, c.char_embed_dim, ch) + 4 * conv_params(3, ch, ch);
    }
    case Variant::InceptionCharWord:
      return inception_params(c.char_inception, c.char_embed_dim) +
             conv_params(1, c.char_inception.out_channels(), c.char_word_dim) +
             inception_params(c.inception, d);
    case Variant::FastTextWord:
    case Variant::FastTextCharWord:
      return 0;
  }
  return 0;
}

inline std::uint64_t embedding_param_count(const ExtractorConfig& c) {
  std::uint64_t n = 0;
  if (uses_words(c.variant)) n += std::uint64_t{c.word_vocab_size} * c.word_table_dim();
  if (c.char_table_dim() > 0) n += std::uint64_t{c.char_vocab_size} * c.char_table_dim();
  return n;
}

/// Stacked LSTM: sum over layers of 4 * ((in_l + hidden) * hidden + hidden),
/// with in_1 = input_dim and in_l = hidden afterwards.
inline std::uint64_t lstm_param_count(std::uint64_t input_dim, std::uint64_t hidden_dim,
                                      std::uint64_t num_layers) {
  if (input_dim < 1 || hidden_dim < 1 || num_layers < 1) {
    throw Error("lstm_param_count: all dimensions must be >= 1");
  }
  std::uint64_t n = 0;
  for (std::uint64_t l = 0; l < num_layers; ++l) {
    const std::uint64_t in = l == 0 ? input_dim : hidden_dim;
    n += 4 * ((in + hidden_dim) * hidden_dim + hidden_dim);
  }
  return n;
}

}  // namespace convtext

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "convtext/config.hpp"
#include "convtext/error.hpp"
#include "convtext/ops.hpp"
#include "convtext/rng.hpp"
#include "convtext/tensor.hpp"
#include "convtext/vocab.hpp"

namespace convtext {

template <typename Real = double>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  bool embedding = false;  // excluded from headline parameter counts
};

template <typename Real>
using Gradients = std::vector<Tensor<Real>>;

/// Encoded inputs for one question. `words` drives word variants,
/// `chars` is the whole question as one character sequence, `word_chars`
/// holds one character sequence per real word.
struct ModelInput {
  EncodedSentence words;
  EncodedSentence chars;
  std::vector<EncodedSentence> word_chars;
};

inline std::string join_tokens(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

/// Encodes every view of a tokenized question at its natural length.
inline ModelInput encode_input(const WordVocab& words, const CharVocab& chars,
                               const Tokens& tokens) {
  if (tokens.empty()) throw Error("empty sentence");
  ModelInput in;
  in.words = encode_words(words, tokens, tokens.size());
  const std::string text = join_tokens(tokens);
  in.chars = encode_chars(chars, text, std::max<std::size_t>(1, utf8_chars(text).size()));
  for (const auto& t : tokens) {
    in.word_chars.push_back(encode_chars(chars, t, std::max<std::size_t>(1, utf8_chars(t).size())));
  }
  return in;
}

/// Re-pads every view to the given lengths (used for per-batch padding).
inline ModelInput pad_input(const ModelInput& in, std::size_t word_len, std::size_t char_len,
                            std::size_t word_char_len) {
  ModelInput out;
  out.words = repad(in.words, word_len);
  out.chars = repad(in.chars, char_len);
  for (const auto& wc : in.word_chars) out.word_chars.push_back(repad(wc, word_char_len));
  return out;
}

enum class BranchKind { Plain, GateTanh, GateLinear, Bottleneck };

namespace detail {

struct ConvRef {
  std::size_t w = 0, b = 0;
};

struct BranchLayout {
  KernelSpec spec;
  BranchKind kind = BranchKind::Plain;
  ConvRef main, gate, reduce, expand;
};

struct InceptionLayout {
  std::vector<BranchLayout> branches;
  std::size_t in = 0, out = 0;

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    for (const auto& b : branches) w.push_back(b.spec.out_channels);
    return w;
  }
};

template <typename Real>
struct BranchCache {
  GatedConvCache<Real> gated;
  Tensor<Real> reduced;  // relu(reduce conv), masked
  Tensor<Real> mid;      // relu(wide conv), masked
};

template <typename Real>
struct InceptionCache {
  Tensor<Real> input;
  Mask mask;
  std::vector<BranchCache<Real>> branches;
};

enum class DeepStep { Residual, Pool };

template <typename Real>
struct DeepCache {
  DeepStep step = DeepStep::Residual;
  Tensor<Real> input;
  Tensor<Real> activation;  // relu(conv(input)), masked
  Mask in_mask;
  std::vector<std::ptrdiff_t> positions;
};

template <typename Real>
struct WordCharCache {
  Tensor<Real> embedded;
  InceptionCache<Real> layer;
  Tensor<Real> reduce_input;
  std::vector<std::ptrdiff_t> positions;
};

}  // namespace detail

/// Intermediate values recorded by Extractor::forward for backward.
template <typename Real = double>
struct ForwardCache {
  const void* owner = nullptr;
  std::uint64_t version = 0;
  ModelInput input;
  Tensor<Real> embedded;  // masked input to the main convolution (or mean)
  Mask mask;
  std::vector<detail::InceptionCache<Real>> layers;
  Tensor<Real> first_conv_input;  // deep variant: first conv input
  Tensor<Real> first_conv_output;
  std::vector<detail::DeepCache<Real>> deep;
  Shape pooled_shape;
  Mask pooled_mask;
  std::vector<std::ptrdiff_t> pool_positions;
  std::vector<detail::WordCharCache<Real>> words;
  std::vector<Real> dropout_scale;
};

/// An instantiated architecture: config, named parameters, and explicit
/// forward/backward passes over one question at a time.
template <typename Real = double>
class Extractor {
 public:
  Extractor(ExtractorConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    build(rng);
  }

  /// Rebuilds an extractor around existing parameter values (checkpoint
  /// loading). Names and shapes must match what `config` would create.
  static Extractor from_parameters(const ExtractorConfig& config,
                                   std::vector<Parameter<Real>> values) {
    Extractor e(config, 0);
    if (values.size() != e.params_.size()) {
      throw Error("expected " + std::to_string(e.params_.size()) + " parameter tensors, got " +
                  std::to_string(values.size()));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto& p = e.params_[i];
      if (values[i].name != p.name || values[i].value.shape() != p.value.shape()) {
        throw Error("parameter mismatch at " + std::to_string(i) + ": expected " + p.name + " " +
                    shape_str(p.value.shape()) + ", got " + values[i].name + " " +
                    shape_str(values[i].value.shape()));
      }
      p.value = std::move(values[i].value);
    }
    return e;
  }

  const ExtractorConfig& config() const { return config_; }
  std::size_t output_dim() const { return config_.output_dim(); }
  const std::vector<Parameter<Real>>& parameters() const { return params_; }

  /// Mutable access invalidates outstanding forward caches.
  std::vector<Parameter<Real>>& mutable_parameters() {
    ++version_;
    return params_;
  }

  Parameter<Real>& mutable_parameter(const std::string& name) {
    ++version_;
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw Error("no parameter named " + name);
  }

  const Parameter<Real>& parameter(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return p;
    }
    throw Error("no parameter named " + name);
  }

  /// Number of scalars in non-embedding parameters.
  std::uint64_t feature_param_count() const {
    std::uint64_t n = 0;
    for (const auto& p : params_) {
      if (!p.embedding) n += p.value.size();
    }
    return n;
  }

  Gradients<Real> zero_gradients() const {
    Gradients<Real> g;
    for (const auto& p : params_) g.emplace_back(p.value.shape());
    return g;
  }

  /// Forward pass. With `dropout_rng` set, applies dropout of `dropout_rate`
  /// to the output (training mode); otherwise evaluation mode.
  Tensor<Real> forward(const ModelInput& in, ForwardCache<Real>* cache = nullptr,
                       Rng* dropout_rng = nullptr, double dropout_rate = 0.0) const {
    ForwardCache<Real> local;
    ForwardCache<Real>& c = cache ? *cache : local;
    c = ForwardCache<Real>{};
    c.owner = this;
    c.version = version_;
    c.input = in;
    Tensor<Real> out;
    switch (config_.variant) {
      case Variant::FastTextWord:
      case Variant::FastTextCharWord:
        out = forward_fasttext(in, c);
        break;
      case Variant::DeepResidualChar:
        out = forward_deep(in, c);
        break;
      default:
        out = forward_inception_family(in, c);
        break;
    }
    if (dropout_rng) {
      auto d = dropout_forward(out, dropout_rate, *dropout_rng, true);
      c.dropout_scale = std::move(d.scale);
      out = std::move(d.output);
    }
    if (!cache) c = ForwardCache<Real>{};
    return out;
  }

  /// Gradients of every parameter (same order as parameters()) given the
  /// gradient of the output vector.
  Gradients<Real> backward(const ForwardCache<Real>& c, const Tensor<Real>& grad_out) const {
    if (c.owner != this || c.version != version_) {
      throw Error("backward called with a stale or missing forward cache");
    }
    if (grad_out.rank() != 1 || grad_out.dim(0) != output_dim()) {
      throw Error("backward: gradient shape " + shape_str(grad_out.shape()) +
                  " does not match output dim " + std::to_string(output_dim()));
    }
    Gradients<Real> grads = zero_gradients();
    Tensor<Real> g = dropout_backward(grad_out, c.dropout_scale);
    switch (config_.variant) {
      case Variant::FastTextWord:
      case Variant::FastTextCharWord:
        backward_fasttext(c, g, grads);
        break;
      case Variant::DeepResidualChar:
        backward_deep(c, g, grads);
        break;
      default:
        backward_inception_family(c, g, grads);
        break;
    }
    return grads;
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  // Non-zero so no ReLU starts exactly at its kink.
  static constexpr double kBiasInitBound = 0.01;

  // ------------------------------------------------------------ building

  std::size_t add_param(const std::string& name, Shape shape, Rng& rng, double bound,
                        bool embedding = false) {
    Tensor<Real> t(std::move(shape));
    if (bound > 0) {
      for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
    }
    params_.push_back({name, std::move(t), embedding});
    return params_.size() - 1;
  }

  detail::ConvRef add_conv(const std::string& prefix, std::size_t width, std::size_t in,
                           std::size_t out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(width * in + width * out));
    detail::ConvRef r;
    r.w = add_param(prefix + "weight", {width, in, out}, rng, bound);
    r.b = add_param(prefix + "bias", {out}, rng, kBiasInitBound);
    return r;
  }

  std::size_t add_embedding(const std::string& name, std::size_t rows, std::size_t dim, Rng& rng) {
    const std::size_t idx = add_param(name, {rows, dim}, rng, 0.08, true);
    auto pad = params_[idx].value.row(kPadIndex);
    std::fill(pad.begin(), pad.end(), Real(0));
    return idx;
  }

  detail::InceptionLayout add_inception(const std::string& prefix, const InceptionSpec& spec,
                                        std::size_t in, BranchKind kind, Rng& rng) {
    detail::InceptionLayout layer;
    layer.in = in;
    layer.out = spec.out_channels();
    for (std::size_t i = 0; i < spec.branches.size(); ++i) {
      const auto& k = spec.branches[i];
      const std::string p = prefix + ".b" + std::to_string(i) + ".";
      detail::BranchLayout b;
      b.spec = k;
      b.kind = kind;
      if (kind == BranchKind::Bottleneck) {
        const std::size_t r = k.out_channels / 4;
        b.reduce = add_conv(p + "reduce_", 1, in, r, rng);
        b.main = add_conv(p, k.width, r, r, rng);
        b.expand = add_conv(p + "expand_", 1, r, k.out_channels, rng);
      } else {
        b.main = add_conv(p, k.width, in, k.out_channels, rng);
        if (kind == BranchKind::GateTanh || kind == BranchKind::GateLinear) {
          b.gate = add_conv(p + "gate_", k.width, in, k.out_channels, rng);
        }
      }
      layer.branches.push_back(b);
    }
    return layer;
  }

  void build(Rng& rng) {
    const auto& c = config_;
    if (uses_words(c.variant)) {
      word_table_ = add_embedding("embed.word", c.word_vocab_size, c.word_table_dim(), rng);
    }
    if (c.char_table_dim() > 0) {
      char_table_ = add_embedding("embed.char", c.char_vocab_size, c.char_table_dim(), rng);
    }
    switch (c.variant) {
      case Variant::NonInception:
      case Variant::InceptionWord:
        layers_.push_back(add_inception("incep0", c.inception, c.embed_dim, BranchKind::Plain, rng));
        break;
      case Variant::InceptionGateTanh:
        layers_.push_back(add_inception("incep0", c.inception, c.embed_dim, BranchKind::GateTanh, rng));
        break;
      case Variant::InceptionGate:
        layers_.push_back(add_inception("incep0", c.inception, c.embed_dim, BranchKind::GateLinear, rng));
        break;
      case Variant::InceptionBottleneck:
        layers_.push_back(add_inception("incep0", c.inception, c.embed_dim, BranchKind::Bottleneck, rng));
        break;
      case Variant::InceptionResidual:
        layers_.push_back(add_inception("incep0", c.inception, c.embed_dim, BranchKind::Plain, rng));
        layers_.push_back(add_inception("incep1", c.inception, c.inception.out_channels(),
                                        BranchKind::Plain, rng));
        break;
      case Variant::InceptionChar:
        layers_.push_back(add_inception("incep0", c.inception, c.char_embed_dim, BranchKind::Plain, rng));
        break;
      case Variant::DeepResidualChar:
        deep_first_ = add_conv("deep.conv0.", 3, c.char_embed_dim, c.deep_channels, rng);
        for (std::size_t i = 1; i <= kDeepResidualConvs; ++i) {
          deep_convs_.push_back(
              add_conv("deep.conv" + std::to_string(i) + ".", 3, c.deep_channels, c.deep_channels, rng));
        }
        break;
      case Variant::InceptionCharWord:
        char_layer_ = add_inception("char_incep", c.char_inception, c.char_embed_dim,
                                    BranchKind::Plain, rng);
        char_reduce_ = add_conv("char_reduce.", 1, c.char_inception.out_channels(), c.char_word_dim, rng);
        layers_.push_back(add_inception("incep0", c.inception, c.embed_dim, BranchKind::Plain, rng));
        break;
      case Variant::FastTextWord:
      case Variant::FastTextCharWord:
        break;
    }
  }

  // ------------------------------------------------------- shared pieces

  const Tensor<Real>& P(std::size_t i) const { return params_[i].value; }

  static void require_mask_consistent(const EncodedSentence& s, const char* what) {
    if (s.mask.size() != s.indices.size() || s.true_length < 1 ||
        s.true_length > s.indices.size()) {
      throw Error(std::string(what) + ": malformed encoded sentence");
    }
  }

  Tensor<Real> embed(std::size_t table, const EncodedSentence& s) const {
    require_mask_consistent(s, "embed");
    return apply_mask(embedding_forward(P(table), s), s.mask);
  }

  Tensor<Real> inception_forward(const detail::InceptionLayout& layer, const Tensor<Real>& x,
                                 const Mask& mask, detail::InceptionCache<Real>& cache) const {
    cache.input = x;
    cache.mask = mask;
    cache.branches.assign(layer.branches.size(), {});
    std::vector<Tensor<Real>> parts;
    for (std::size_t i = 0; i < layer.branches.size(); ++i) {
      const auto& b = layer.branches[i];
      auto& bc = cache.branches[i];
      switch (b.kind) {
        case BranchKind::Plain:
          parts.push_back(conv1d_forward(x, P(b.main.w), P(b.main.b)));
          break;
        case BranchKind::GateTanh:
        case BranchKind::GateLinear:
          parts.push_back(gated_conv_forward(
              x, P(b.main.w), P(b.main.b), P(b.gate.w), P(b.gate.b),
              b.kind == BranchKind::GateTanh ? GateVariant::Tanh : GateVariant::Linear, &bc.gated));
          break;
        case BranchKind::Bottleneck:
          bc.reduced = apply_mask(elementwise_forward(Elementwise::Relu,
                                                      conv1d_forward(x, P(b.reduce.w), P(b.reduce.b))),
                                  mask);
          bc.mid = apply_mask(elementwise_forward(Elementwise::Relu,
                                                  conv1d_forward(bc.reduced, P(b.main.w), P(b.main.b))),
                              mask);
          parts.push_back(conv1d_forward(bc.mid, P(b.expand.w), P(b.expand.b)));
          break;
      }
    }
    return apply_mask(concat_channels(parts), mask);
  }

  void add_conv_grads(const detail::ConvRef& r, ConvGrads<Real>& g, Gradients<Real>& grads) const {
    grads[r.w] += g.weights;
    grads[r.b] += g.bias;
  }

  Tensor<Real> inception_backward(const detail::InceptionLayout& layer,
                                  const detail::InceptionCache<Real>& cache,
                                  const Tensor<Real>& grad_out, Gradients<Real>& grads) const {
    const auto parts = split_channels(apply_mask(grad_out, cache.mask), layer.widths());
    Tensor<Real> gx(cache.input.shape());
    for (std::size_t i = 0; i < layer.branches.size(); ++i) {
      const auto& b = layer.branches[i];
      const auto& bc = cache.branches[i];
      switch (b.kind) {
        case BranchKind::Plain: {
          auto g = conv1d_backward(parts[i], cache.input, P(b.main.w));
          add_conv_grads(b.main, g, grads);
          gx += g.input;
          break;
        }
        case BranchKind::GateTanh:
        case BranchKind::GateLinear: {
          auto g = gated_conv_backward(
              parts[i], cache.input, P(b.main.w), P(b.gate.w),
              b.kind == BranchKind::GateTanh ? GateVariant::Tanh : GateVariant::Linear, bc.gated);
          grads[b.main.w] += g.kernel.weights;
          grads[b.main.b] += g.kernel.bias;
          grads[b.gate.w] += g.gate_kernel.weights;
          grads[b.gate.b] += g.gate_kernel.bias;
          gx += g.input;
          break;
        }
        case BranchKind::Bottleneck: {
          auto ge = conv1d_backward(parts[i], bc.mid, P(b.expand.w));
          add_conv_grads(b.expand, ge, grads);
          auto gm = conv1d_backward(elementwise_backward(Elementwise::Relu, bc.mid, ge.input),
                                    bc.reduced, P(b.main.w));
          add_conv_grads(b.main, gm, grads);
          auto gr = conv1d_backward(elementwise_backward(Elementwise::Relu, bc.reduced, gm.input),
                                    cache.input, P(b.reduce.w));
          add_conv_grads(b.reduce, gr, grads);
          gx += gr.input;
          break;
        }
      }
    }
    return gx;
  }

  Tensor<Real> global_max(const Tensor<Real>& features, const Mask& mask,
                          ForwardCache<Real>& c) const {
    auto r = kmax_pool_forward(features, 1, mask);
    c.pooled_shape = features.shape();
    c.pool_positions = std::move(r.positions);
    return r.output.reshaped({features.dim(1)});
  }

  Tensor<Real> global_max_backward(const ForwardCache<Real>& c, const Tensor<Real>& g) const {
    return kmax_pool_backward(g.reshaped({1, g.dim(0)}), c.pool_positions, c.pooled_shape);
  }

  // --------------------------------------------------- inception family

  /// Character features of real word i: char CNN, width-1 reduce, max.
  Tensor<Real> char_word_vector(const EncodedSentence& chars,
                                detail::WordCharCache<Real>& wc) const {
    wc.embedded = embed(char_table_, chars);
    wc.reduce_input = inception_forward(char_layer_, wc.embedded, chars.mask, wc.layer);
    auto reduced = conv1d_forward(wc.reduce_input, P(char_reduce_.w), P(char_reduce_.b));
    auto r = kmax_pool_forward(reduced, 1, chars.mask);
    wc.positions = std::move(r.positions);
    return r.output;  // 1 x char_word_dim
  }

  void require_word_chars(const ModelInput& in) const {
    if (in.word_chars.size() < in.words.true_length) {
      throw Error("input has " + std::to_string(in.word_chars.size()) +
                  " character sequences for " + std::to_string(in.words.true_length) + " words");
    }
  }

  Tensor<Real> forward_inception_family(const ModelInput& in, ForwardCache<Real>& c) const {
    const auto v = config_.variant;
    if (v == Variant::InceptionChar) {
      c.mask = in.chars.mask;
      c.embedded = embed(char_table_, in.chars);
    } else if (v == Variant::InceptionCharWord) {
      require_mask_consistent(in.words, "words");
      require_word_chars(in);
      c.mask = in.words.mask;
      const Tensor<Real> word_part = embed(word_table_, in.words);
      Tensor<Real> char_part({in.words.padded_length(), config_.char_word_dim});
      c.words.resize(in.words.true_length);
      for (std::size_t i = 0; i < in.words.true_length; ++i) {
        const auto vec = char_word_vector(in.word_chars[i], c.words[i]);
        std::copy_n(vec.row(0).begin(), config_.char_word_dim, char_part.row(i).begin());
      }
      c.embedded = concat_channels<Real>({word_part, char_part});
    } else {
      c.mask = in.words.mask;
      c.embedded = embed(word_table_, in.words);
    }
    c.layers.resize(layers_.size());
    Tensor<Real> h = inception_forward(layers_[0], c.embedded, c.mask, c.layers[0]);
    if (v == Variant::InceptionResidual) {
      h += inception_forward(layers_[1], h, c.mask, c.layers[1]);
    }
    return global_max(h, c.mask, c);
  }

  void backward_inception_family(const ForwardCache<Real>& c, const Tensor<Real>& g,
                                 Gradients<Real>& grads) const {
    const auto v = config_.variant;
    Tensor<Real> gh = global_max_backward(c, g);
    if (v == Variant::InceptionResidual) {
      gh += inception_backward(layers_[1], c.layers[1], gh, grads);
    }
    Tensor<Real> gx = apply_mask(inception_backward(layers_[0], c.layers[0], gh, grads), c.mask);
    if (v == Variant::InceptionChar) {
      embedding_backward_accumulate(gx, c.input.chars, grads[char_table_]);
    } else if (v == Variant::InceptionCharWord) {
      const auto halves = split_channels(gx, {config_.word_table_dim(), config_.char_word_dim});
      embedding_backward_accumulate(halves[0], c.input.words, grads[word_table_]);
      for (std::size_t i = 0; i < c.words.size(); ++i) {
        const auto& wc = c.words[i];
        const auto& chars = c.input.word_chars[i];
        Tensor<Real> gv({1, config_.char_word_dim});
        std::copy_n(halves[1].row(i).begin(), config_.char_word_dim, gv.row(0).begin());
        auto greduced = kmax_pool_backward(gv, wc.positions,
                                           {chars.padded_length(), config_.char_word_dim});
        auto gr = conv1d_backward(greduced, wc.reduce_input, P(char_reduce_.w));
        add_conv_grads(char_reduce_, gr, grads);
        auto ge = apply_mask(inception_backward(char_layer_, wc.layer, gr.input, grads), chars.mask);
        embedding_backward_accumulate(ge, chars, grads[char_table_]);
      }
    } else {
      embedding_backward_accumulate(gx, c.input.words, grads[word_table_]);
    }
  }

  // ----------------------------------------------------- deep residual

  // conv -> res -> res -> pool -> res -> pool -> res -> pool -> global max
  static constexpr std::size_t kDeepResidualConvs = 4;
  static constexpr detail::DeepStep kDeepPlan[] = {
      detail::DeepStep::Residual, detail::DeepStep::Residual, detail::DeepStep::Pool,
      detail::DeepStep::Residual, detail::DeepStep::Pool,     detail::DeepStep::Residual,
      detail::DeepStep::Pool,
  };

  Tensor<Real> forward_deep(const ModelInput& in, ForwardCache<Real>& c) const {
    c.embedded = embed(char_table_, in.chars);
    Mask mask = in.chars.mask;
    c.first_conv_input = c.embedded;
    Tensor<Real> h = apply_mask(
        elementwise_forward(Elementwise::Relu,
                            conv1d_forward(c.embedded, P(deep_first_.w), P(deep_first_.b))),
        mask);
    c.first_conv_output = h;
    std::size_t conv = 0;
    for (auto step : kDeepPlan) {
      detail::DeepCache<Real> dc;
      dc.step = step;
      dc.input = h;
      dc.in_mask = mask;
      if (step == detail::DeepStep::Residual) {
        const auto& k = deep_convs_[conv++];
        dc.activation = apply_mask(
            elementwise_forward(Elementwise::Relu, conv1d_forward(h, P(k.w), P(k.b))), mask);
        h += dc.activation;
      } else {
        auto r = local_max_pool_forward(h, mask, 2, 2);
        dc.positions = std::move(r.positions);
        h = std::move(r.output);
        mask = std::move(r.mask);
      }
      c.deep.push_back(std::move(dc));
    }
    c.mask = mask;
    return global_max(h, mask, c);
  }

  void backward_deep(const ForwardCache<Real>& c, const Tensor<Real>& g,
                     Gradients<Real>& grads) const {
    Tensor<Real> gh = global_max_backward(c, g);
    std::size_t conv = kDeepResidualConvs;
    for (std::size_t s = c.deep.size(); s-- > 0;) {
      const auto& dc = c.deep[s];
      if (dc.step == detail::DeepStep::Residual) {
        const auto& k = deep_convs_[--conv];
        auto ga = conv1d_backward(elementwise_backward(Elementwise::Relu, dc.activation, gh),
                                  dc.input, P(k.w));
        add_conv_grads(k, ga, grads);
        gh += ga.input;
        gh = apply_mask(std::move(gh), dc.in_mask);
      } else {
        gh = local_max_pool_backward(gh, dc.positions, dc.input.shape());
      }
    }
    auto g0 = conv1d_backward(elementwise_backward(Elementwise::Relu, c.first_conv_output, gh),
                              c.first_conv_input, P(deep_first_.w));
    add_conv_grads(deep_first_, g0, grads);
    embedding_backward_accumulate(apply_mask(g0.input, c.input.chars.mask), c.input.chars,
                                  grads[char_table_]);
  }

  // ------------------------------------------------------------ fastText

  Tensor<Real> forward_fasttext(const ModelInput& in, ForwardCache<Real>& c) const {
    require_mask_consistent(in.words, "words");
    c.mask = in.words.mask;
    Tensor<Real> word_part = embed(word_table_, in.words);
    if (config_.variant == Variant::FastTextCharWord) {
      require_word_chars(in);
      Tensor<Real> char_part({in.words.padded_length(), config_.char_word_dim});
      for (std::size_t i = 0; i < in.words.true_length; ++i) {
        const auto& chars = in.word_chars[i];
        const auto mean = mean_pool_forward(embed(char_table_, chars), chars.mask);
        std::copy_n(mean.data().begin(), config_.char_word_dim, char_part.row(i).begin());
      }
      c.embedded = concat_channels<Real>({word_part, char_part});
    } else {
      c.embedded = std::move(word_part);
    }
    return mean_pool_forward(c.embedded, c.mask);
  }

  void backward_fasttext(const ForwardCache<Real>& c, const Tensor<Real>& g,
                         Gradients<Real>& grads) const {
    Tensor<Real> gx = mean_pool_backward(g, c.mask);
    if (config_.variant == Variant::FastTextCharWord) {
      const auto halves = split_channels(gx, {config_.word_table_dim(), config_.char_word_dim});
      embedding_backward_accumulate(halves[0], c.input.words, grads[word_table_]);
      for (std::size_t i = 0; i < c.input.words.true_length; ++i) {
        const auto& chars = c.input.word_chars[i];
        Tensor<Real> gm({config_.char_word_dim});
        std::copy_n(halves[1].row(i).begin(), config_.char_word_dim, gm.data().begin());
        embedding_backward_accumulate(mean_pool_backward(gm, chars.mask), chars,
                                      grads[char_table_]);
      }
    } else {
      embedding_backward_accumulate(gx, c.input.words, grads[word_table_]);
    }
  }

  ExtractorConfig config_;
  std::vector<Parameter<Real>> params_;
  std::uint64_t version_ = 0;

  std::size_t word_table_ = kNone, char_table_ = kNone;
  std::vector<detail::InceptionLayout> layers_;
  detail::InceptionLayout char_layer_;
  detail::ConvRef char_reduce_;
  detail::ConvRef deep_first_;
  std::vector<detail::ConvRef> deep_convs_;
};

template <typename Real = double>
Extractor<Real> build_extractor(const ExtractorConfig& config, std::uint64_t seed) {
  return Extractor<Real>(config, seed);
}

/// Evaluation-mode forward pass.
template <typename Real>
Tensor<Real> extract(const Extractor<Real>& extractor, const ModelInput& input) {
  return extractor.forward(input);
}

}  // namespace convtext

#pragma once

// Dense forward/backward kernels over (length x channels) tensors. Every
// backward is written out by hand; there is no tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "convtext/error.hpp"
#include "convtext/rng.hpp"
#include "convtext/tensor.hpp"
#include "convtext/vocab.hpp"

namespace convtext {

template <typename Real = double>
struct ConvKernel {
  Tensor<Real> weights;  // width x in_channels x out_channels
  Tensor<Real> bias;     // out_channels

  ConvKernel() = default;
  ConvKernel(Tensor<Real> w, Tensor<Real> b) : weights(std::move(w)), bias(std::move(b)) {
    if (weights.rank() != 3 || bias.rank() != 1 || bias.dim(0) != weights.dim(2) ||
        weights.dim(0) < 1) {
      throw Error("invalid conv kernel shapes " + shape_str(weights.shape()) + " / " +
                  shape_str(bias.shape()));
    }
  }
  ConvKernel(std::size_t width, std::size_t in, std::size_t out)
      : weights({width, in, out}), bias({out}) {}

  std::size_t width() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t out_channels() const { return weights.dim(2); }
};

template <typename Real>
struct ConvGrads {
  Tensor<Real> input;
  Tensor<Real> weights;
  Tensor<Real> bias;
};

namespace detail {

template <typename Real>
void require_matrix(const Tensor<Real>& t, const char* where) {
  if (t.rank() != 2) {
    throw Error(std::string(where) + ": expected (length x channels), got " +
                shape_str(t.shape()));
  }
}

inline void require_mask(const Mask& mask, std::size_t length, const char* where) {
  if (mask.size() != length) {
    throw Error(std::string(where) + ": mask length " + std::to_string(mask.size()) +
                " != sequence length " + std::to_string(length));
  }
}

}  // namespace detail

// ---------------------------------------------------------------- embedding

/// Row i of the result is table row sentence.indices[i] (PAD rows included).
template <typename Real>
Tensor<Real> embedding_forward(const Tensor<Real>& table, const EncodedSentence& sentence) {
  detail::require_matrix(table, "embedding_forward");
  const std::size_t d = table.dim(1);
  Tensor<Real> out({sentence.indices.size(), d});
  for (std::size_t t = 0; t < sentence.indices.size(); ++t) {
    const std::size_t idx = sentence.indices[t];
    if (idx >= table.dim(0)) {
      throw Error("embedding index " + std::to_string(idx) + " out of range for table of " +
                  std::to_string(table.dim(0)) + " rows");
    }
    std::copy_n(table.row(idx).begin(), d, out.row(t).begin());
  }
  return out;
}

/// Scatter-adds grad_out rows into `table_grad`.
template <typename Real>
void embedding_backward_accumulate(const Tensor<Real>& grad_out,
                                   const EncodedSentence& sentence,
                                   Tensor<Real>& table_grad) {
  detail::require_matrix(grad_out, "embedding_backward");
  if (grad_out.dim(0) != sentence.indices.size() || table_grad.rank() != 2 ||
      grad_out.dim(1) != table_grad.dim(1)) {
    throw Error("embedding_backward: shape mismatch " + shape_str(grad_out.shape()) +
                " vs table " + shape_str(table_grad.shape()));
  }
  const std::size_t d = grad_out.dim(1);
  for (std::size_t t = 0; t < sentence.indices.size(); ++t) {
    const std::size_t idx = sentence.indices[t];
    if (idx >= table_grad.dim(0)) throw Error("embedding_backward: index out of range");
    auto dst = table_grad.row(idx);
    auto src = grad_out.row(t);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
}

template <typename Real>
Tensor<Real> embedding_backward(const Tensor<Real>& grad_out, const EncodedSentence& sentence,
                                const Shape& table_shape) {
  Tensor<Real> g(table_shape);
  embedding_backward_accumulate(grad_out, sentence, g);
  return g;
}

// ------------------------------------------------------------------ masking

/// Zeroes every row whose mask entry is false.
template <typename Real>
Tensor<Real> apply_mask(Tensor<Real> x, const Mask& mask) {
  detail::require_matrix(x, "apply_mask");
  detail::require_mask(mask, x.dim(0), "apply_mask");
  for (std::size_t t = 0; t < x.dim(0); ++t) {
    if (!mask[t]) std::fill(x.row(t).begin(), x.row(t).end(), Real(0));
  }
  return x;
}

// -------------------------------------------------------------- convolution

/// "Same" zero-padded 1-D convolution, stride 1:
/// out[t,o] = b[o] + sum_{j,i} in[t + j - floor(w/2), i] * W[j,i,o].
template <typename Real>
Tensor<Real> conv1d_forward(const Tensor<Real>& input, const Tensor<Real>& weights,
                            const Tensor<Real>& bias) {
  detail::require_matrix(input, "conv1d_forward");
  if (weights.rank() != 3 || weights.dim(1) != input.dim(1) || bias.rank() != 1 ||
      bias.dim(0) != weights.dim(2)) {
    throw Error("conv1d_forward: channel mismatch, input " + shape_str(input.shape()) +
                " kernel " + shape_str(weights.shape()));
  }
  const std::size_t len = input.dim(0), cin = input.dim(1);
  const std::size_t width = weights.dim(0), cout = weights.dim(2);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(width / 2);
  Tensor<Real> out({len, cout});
  for (std::size_t t = 0; t < len; ++t) {
    Real* o = &out(t, 0);
    std::copy_n(bias.data().begin(), cout, o);
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const Real* x = &input(static_cast<std::size_t>(src), 0);
      for (std::size_t i = 0; i < cin; ++i) {
        const Real xv = x[i];
        const Real* w = &weights(j, i, 0);
        for (std::size_t c = 0; c < cout; ++c) o[c] += xv * w[c];
      }
    }
  }
  return out;
}

template <typename Real>
Tensor<Real> conv1d_forward(const Tensor<Real>& input, const ConvKernel<Real>& k) {
  return conv1d_forward(input, k.weights, k.bias);
}

template <typename Real>
ConvGrads<Real> conv1d_backward(const Tensor<Real>& grad_out, const Tensor<Real>& input,
                                const Tensor<Real>& weights) {
  detail::require_matrix(grad_out, "conv1d_backward");
  detail::require_matrix(input, "conv1d_backward");
  if (weights.rank() != 3 || weights.dim(1) != input.dim(1) ||
      grad_out.dim(0) != input.dim(0) || grad_out.dim(1) != weights.dim(2)) {
    throw Error("conv1d_backward: shape mismatch");
  }
  const std::size_t len = input.dim(0), cin = input.dim(1);
  const std::size_t width = weights.dim(0), cout = weights.dim(2);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(width / 2);
  ConvGrads<Real> g{Tensor<Real>(input.shape()), Tensor<Real>(weights.shape()),
                    Tensor<Real>({cout})};
  for (std::size_t t = 0; t < len; ++t) {
    const Real* go = &grad_out(t, 0);
    for (std::size_t c = 0; c < cout; ++c) g.bias[c] += go[c];
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      const auto s = static_cast<std::size_t>(src);
      const Real* x = &input(s, 0);
      Real* gx = &g.input(s, 0);
      for (std::size_t i = 0; i < cin; ++i) {
        const Real* w = &weights(j, i, 0);
        Real* gw = &g.weights(j, i, 0);
        Real acc = 0;
        const Real xv = x[i];
        for (std::size_t c = 0; c < cout; ++c) {
          acc += go[c] * w[c];
          gw[c] += xv * go[c];
        }
        gx[i] += acc;
      }
    }
  }
  return g;
}

template <typename Real>
ConvGrads<Real> conv1d_backward(const Tensor<Real>& grad_out, const Tensor<Real>& input,
                                const ConvKernel<Real>& k) {
  return conv1d_backward(grad_out, input, k.weights);
}

// -------------------------------------------------------------- elementwise

enum class Elementwise { Sigmoid, Tanh, Relu };

template <typename Real>
Real sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
Tensor<Real> elementwise_forward(Elementwise op, Tensor<Real> x) {
  for (auto& v : x.data()) {
    switch (op) {
      case Elementwise::Sigmoid: v = sigmoid(v); break;
      case Elementwise::Tanh: v = std::tanh(v); break;
      case Elementwise::Relu: v = v > 0 ? v : Real(0); break;
    }
  }
  return x;
}

/// Backward expressed through the forward output y:
/// sigmoid' = y(1-y), tanh' = 1-y^2, relu' = [y > 0].
template <typename Real>
Tensor<Real> elementwise_backward(Elementwise op, const Tensor<Real>& output,
                                  Tensor<Real> grad) {
  output.require_same_shape(grad, "elementwise_backward");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const Real y = output[i];
    switch (op) {
      case Elementwise::Sigmoid: grad[i] *= y * (Real(1) - y); break;
      case Elementwise::Tanh: grad[i] *= Real(1) - y * y; break;
      case Elementwise::Relu: grad[i] = y > 0 ? grad[i] : Real(0); break;
    }
  }
  return grad;
}

// ----------------------------------------------------------- gated conv

/// Tanh: O = sigmoid(Kg*I + bg) . tanh(K*I + b)
/// Linear: O = sigmoid(Kg*I + bg) . (K*I + b)
enum class GateVariant { Tanh, Linear };

template <typename Real>
struct GatedConvCache {
  Tensor<Real> content;  // tanh(K*I+b) or K*I+b
  Tensor<Real> gate;     // sigmoid(Kg*I+bg)
};

template <typename Real>
struct GatedConvGrads {
  Tensor<Real> input;
  ConvKernel<Real> kernel;
  ConvKernel<Real> gate_kernel;
};

namespace detail {

template <typename Real>
void require_gate_pair(const ConvKernel<Real>& k, const ConvKernel<Real>& g) {
  if (k.weights.shape() != g.weights.shape() || k.bias.shape() != g.bias.shape()) {
    throw Error("gated conv: kernel " + shape_str(k.weights.shape()) +
                " and gate kernel " + shape_str(g.weights.shape()) + " differ");
  }
}

}  // namespace detail

template <typename Real>
Tensor<Real> gated_conv_forward(const Tensor<Real>& input, const Tensor<Real>& w,
                                const Tensor<Real>& b, const Tensor<Real>& gw,
                                const Tensor<Real>& gb, GateVariant variant,
                                GatedConvCache<Real>* cache = nullptr) {
  if (w.shape() != gw.shape() || b.shape() != gb.shape()) {
    throw Error("gated conv: kernel " + shape_str(w.shape()) + " and gate kernel " +
                shape_str(gw.shape()) + " differ");
  }
  Tensor<Real> content = conv1d_forward(input, w, b);
  if (variant == GateVariant::Tanh) content = elementwise_forward(Elementwise::Tanh, content);
  Tensor<Real> gate = elementwise_forward(Elementwise::Sigmoid, conv1d_forward(input, gw, gb));
  Tensor<Real> out(content.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gate[i] * content[i];
  if (cache) *cache = {std::move(content), std::move(gate)};
  return out;
}

template <typename Real>
Tensor<Real> gated_conv_forward(const Tensor<Real>& input, const ConvKernel<Real>& kernel,
                                const ConvKernel<Real>& gate_kernel, GateVariant variant,
                                GatedConvCache<Real>* cache = nullptr) {
  detail::require_gate_pair(kernel, gate_kernel);
  return gated_conv_forward(input, kernel.weights, kernel.bias, gate_kernel.weights,
                            gate_kernel.bias, variant, cache);
}

template <typename Real>
GatedConvGrads<Real> gated_conv_backward(const Tensor<Real>& grad_out, const Tensor<Real>& input,
                                         const Tensor<Real>& w, const Tensor<Real>& gw,
                                         GateVariant variant, const GatedConvCache<Real>& cache) {
  grad_out.require_same_shape(cache.content, "gated_conv_backward");
  Tensor<Real> d_content(grad_out.shape()), d_gate(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    d_content[i] = grad_out[i] * cache.gate[i];
    d_gate[i] = grad_out[i] * cache.content[i];
  }
  if (variant == GateVariant::Tanh) {
    d_content = elementwise_backward(Elementwise::Tanh, cache.content, std::move(d_content));
  }
  d_gate = elementwise_backward(Elementwise::Sigmoid, cache.gate, std::move(d_gate));
  auto gc = conv1d_backward(d_content, input, w);
  auto gg = conv1d_backward(d_gate, input, gw);
  gc.input += gg.input;
  return {std::move(gc.input), ConvKernel<Real>(std::move(gc.weights), std::move(gc.bias)),
          ConvKernel<Real>(std::move(gg.weights), std::move(gg.bias))};
}

template <typename Real>
GatedConvGrads<Real> gated_conv_backward(const Tensor<Real>& grad_out, const Tensor<Real>& input,
                                         const ConvKernel<Real>& kernel,
                                         const ConvKernel<Real>& gate_kernel,
                                         GateVariant variant, const GatedConvCache<Real>& cache) {
  detail::require_gate_pair(kernel, gate_kernel);
  return gated_conv_backward(grad_out, input, kernel.weights, gate_kernel.weights, variant,
                             cache);
}

// ------------------------------------------------------------------ pooling

/// Positions are flat (k x channels); -1 marks an empty slot.
template <typename Real>
struct KMaxResult {
  Tensor<Real> output;
  std::vector<std::ptrdiff_t> positions;
};

/// Per channel, the k largest unmasked values in original sequence order.
/// Ties go to the earliest position. Slots beyond the unmasked count are 0.
template <typename Real>
KMaxResult<Real> kmax_pool_forward(const Tensor<Real>& input, std::size_t k, const Mask& mask) {
  detail::require_matrix(input, "kmax_pool_forward");
  detail::require_mask(mask, input.dim(0), "kmax_pool_forward");
  if (k < 1) throw Error("kmax_pool_forward: k must be >= 1");
  const std::size_t len = input.dim(0), ch = input.dim(1);
  std::vector<std::size_t> valid;
  for (std::size_t t = 0; t < len; ++t) {
    if (mask[t]) valid.push_back(t);
  }
  if (valid.empty()) throw Error("kmax_pool_forward: input is fully masked");

  KMaxResult<Real> r{Tensor<Real>({k, ch}), std::vector<std::ptrdiff_t>(k * ch, -1)};
  const std::size_t take = std::min(k, valid.size());
  std::vector<std::size_t> order(valid.size());
  for (std::size_t c = 0; c < ch; ++c) {
    if (take == 1) {
      std::size_t best = valid.front();
      for (std::size_t t : valid) {
        if (input(t, c) > input(best, c)) best = t;
      }
      order[0] = best;
    } else {
      order = valid;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return input(a, c) > input(b, c);
      });
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    }
    for (std::size_t s = 0; s < take; ++s) {
      r.output(s, c) = input(order[s], c);
      r.positions[s * ch + c] = static_cast<std::ptrdiff_t>(order[s]);
    }
  }
  return r;
}

template <typename Real>
Tensor<Real> kmax_pool_backward(const Tensor<Real>& grad_out,
                                const std::vector<std::ptrdiff_t>& positions,
                                const Shape& input_shape) {
  detail::require_matrix(grad_out, "kmax_pool_backward");
  if (input_shape.size() != 2 || grad_out.dim(1) != input_shape[1] ||
      positions.size() != grad_out.size()) {
    throw Error("kmax_pool_backward: shape mismatch");
  }
  Tensor<Real> g(input_shape);
  const std::size_t ch = input_shape[1];
  for (std::size_t s = 0; s < grad_out.dim(0); ++s) {
    for (std::size_t c = 0; c < ch; ++c) {
      const auto p = positions[s * ch + c];
      if (p < 0) continue;
      if (static_cast<std::size_t>(p) >= input_shape[0]) {
        throw Error("kmax_pool_backward: position out of range");
      }
      g(static_cast<std::size_t>(p), c) += grad_out(s, c);
    }
  }
  return g;
}

/// Windowed max over unmasked rows. An output row is valid when its window
/// holds at least one valid input row; invalid rows are zero.
template <typename Real>
struct LocalPoolResult {
  Tensor<Real> output;
  Mask mask;
  std::vector<std::ptrdiff_t> positions;
};

template <typename Real>
LocalPoolResult<Real> local_max_pool_forward(const Tensor<Real>& input, const Mask& mask,
                                             std::size_t width, std::size_t stride) {
  detail::require_matrix(input, "local_max_pool_forward");
  detail::require_mask(mask, input.dim(0), "local_max_pool_forward");
  if (width < 1 || stride < 1) throw Error("local_max_pool_forward: width/stride must be >= 1");
  const std::size_t len = input.dim(0), ch = input.dim(1);
  const std::size_t out_len = len == 0 ? 0 : (len + stride - 1) / stride;
  LocalPoolResult<Real> r{Tensor<Real>({out_len, ch}), Mask(out_len, false),
                          std::vector<std::ptrdiff_t>(out_len * ch, -1)};
  for (std::size_t o = 0; o < out_len; ++o) {
    const std::size_t begin = o * stride, end = std::min(len, begin + width);
    for (std::size_t c = 0; c < ch; ++c) {
      std::ptrdiff_t best = -1;
      for (std::size_t t = begin; t < end; ++t) {
        if (!mask[t]) continue;
        if (best < 0 || input(t, c) > input(static_cast<std::size_t>(best), c)) {
          best = static_cast<std::ptrdiff_t>(t);
        }
      }
      if (best < 0) continue;
      r.mask[o] = true;
      r.output(o, c) = input(static_cast<std::size_t>(best), c);
      r.positions[o * ch + c] = best;
    }
  }
  return r;
}

template <typename Real>
Tensor<Real> local_max_pool_backward(const Tensor<Real>& grad_out,
                                     const std::vector<std::ptrdiff_t>& positions,
                                     const Shape& input_shape) {
  return kmax_pool_backward(grad_out, positions, input_shape);
}

/// Per-channel mean over unmasked rows. Values are summed in sorted order so
/// the result does not depend on row order.
template <typename Real>
Tensor<Real> mean_pool_forward(const Tensor<Real>& input, const Mask& mask) {
  detail::require_matrix(input, "mean_pool_forward");
  detail::require_mask(mask, input.dim(0), "mean_pool_forward");
  const std::size_t len = input.dim(0), ch = input.dim(1);
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (count == 0) throw Error("mean_pool_forward: input is fully masked");
  Tensor<Real> out({ch});
  std::vector<Real> col;
  col.reserve(count);
  for (std::size_t c = 0; c < ch; ++c) {
    col.clear();
    for (std::size_t t = 0; t < len; ++t) {
      if (mask[t]) col.push_back(input(t, c));
    }
    std::sort(col.begin(), col.end());
    Real sum = 0;
    for (Real v : col) sum += v;
    out[c] = sum / static_cast<Real>(count);
  }
  return out;
}

template <typename Real>
Tensor<Real> mean_pool_backward(const Tensor<Real>& grad_out, const Mask& mask) {
  if (grad_out.rank() != 1) throw Error("mean_pool_backward: expected a vector gradient");
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (count == 0) throw Error("mean_pool_backward: input is fully masked");
  const std::size_t ch = grad_out.dim(0);
  Tensor<Real> g({mask.size(), ch});
  const Real inv = Real(1) / static_cast<Real>(count);
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    for (std::size_t c = 0; c < ch; ++c) g(t, c) = grad_out[c] * inv;
  }
  return g;
}

// ------------------------------------------------------------------- concat

/// Concatenates (length x c_i) parts along channels, in order. Empty parts
/// (no elements) are skipped.
template <typename Real>
Tensor<Real> concat_channels(const std::vector<Tensor<Real>>& parts) {
  std::size_t len = 0, total = 0;
  bool have_len = false;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    detail::require_matrix(p, "concat_channels");
    if (have_len && p.dim(0) != len) {
      throw Error("concat_channels: length mismatch " + std::to_string(p.dim(0)) + " vs " +
                  std::to_string(len));
    }
    len = p.dim(0);
    have_len = true;
    total += p.dim(1);
  }
  Tensor<Real> out({len, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    for (std::size_t t = 0; t < len; ++t) {
      std::copy_n(p.row(t).begin(), p.dim(1), out.row(t).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += p.dim(1);
  }
  return out;
}

/// Inverse of concat_channels: slices columns into the given widths.
template <typename Real>
std::vector<Tensor<Real>> split_channels(const Tensor<Real>& x,
                                         const std::vector<std::size_t>& widths) {
  detail::require_matrix(x, "split_channels");
  if (std::accumulate(widths.begin(), widths.end(), std::size_t{0}) != x.dim(1)) {
    throw Error("split_channels: widths do not sum to channel count");
  }
  std::vector<Tensor<Real>> parts;
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    Tensor<Real> p({x.dim(0), w});
    for (std::size_t t = 0; t < x.dim(0); ++t) {
      std::copy_n(x.row(t).begin() + static_cast<std::ptrdiff_t>(offset), w, p.row(t).begin());
    }
    parts.push_back(std::move(p));
    offset += w;
  }
  return parts;
}

// ------------------------------------------------------------------- linear

template <typename Real>
struct LinearGrads {
  Tensor<Real> input;
  Tensor<Real> weights;
  Tensor<Real> bias;
};

/// y = W x + b with W of shape (out x in).
template <typename Real>
Tensor<Real> linear_forward(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  if (x.rank() != 1 || w.rank() != 2 || w.dim(1) != x.dim(0) || b.rank() != 1 ||
      b.dim(0) != w.dim(0)) {
    throw Error("linear_forward: shape mismatch, x " + shape_str(x.shape()) + " W " +
                shape_str(w.shape()));
  }
  Tensor<Real> y = b;
  for (std::size_t o = 0; o < w.dim(0); ++o) {
    Real acc = 0;
    for (std::size_t i = 0; i < w.dim(1); ++i) acc += w(o, i) * x[i];
    y[o] += acc;
  }
  return y;
}

template <typename Real>
LinearGrads<Real> linear_backward(const Tensor<Real>& grad_out, const Tensor<Real>& x,
                                  const Tensor<Real>& w) {
  if (grad_out.rank() != 1 || grad_out.dim(0) != w.dim(0) || x.dim(0) != w.dim(1)) {
    throw Error("linear_backward: shape mismatch");
  }
  LinearGrads<Real> g{Tensor<Real>(x.shape()), Tensor<Real>(w.shape()), grad_out};
  for (std::size_t o = 0; o < w.dim(0); ++o) {
    for (std::size_t i = 0; i < w.dim(1); ++i) {
      g.weights(o, i) = grad_out[o] * x[i];
      g.input[i] += w(o, i) * grad_out[o];
    }
  }
  return g;
}

template <typename Real>
struct LossAndGrad {
  Real loss;
  Tensor<Real> grad;
};

/// Cross-entropy of softmax(logits) against `label`; grad = softmax - onehot.
template <typename Real>
LossAndGrad<Real> softmax_cross_entropy(const Tensor<Real>& logits, std::size_t label) {
  if (logits.rank() != 1 || logits.size() == 0) throw Error("softmax_cross_entropy: bad logits");
  if (label >= logits.size()) {
    throw Error("label " + std::to_string(label) + " out of range for " +
                std::to_string(logits.size()) + " classes");
  }
  const Real m = *std::max_element(logits.data().begin(), logits.data().end());
  Real z = 0;
  for (Real v : logits.data()) z += std::exp(v - m);
  const Real log_z = m + std::log(z);
  LossAndGrad<Real> r{log_z - logits[label], Tensor<Real>(logits.shape())};
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - log_z);
  r.grad[label] -= Real(1);
  return r;
}

// ------------------------------------------------------------------ dropout

template <typename Real>
struct DropoutResult {
  Tensor<Real> output;
  std::vector<Real> scale;  // 0 or 1/(1-rate) per entry; empty when identity
};

/// Inverted dropout; evaluation mode (or rate 0) is the identity.
template <typename Real>
DropoutResult<Real> dropout_forward(const Tensor<Real>& input, double rate, Rng& rng,
                                    bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout rate must be in [0, 1)");
  DropoutResult<Real> r{input, {}};
  if (!training || rate == 0.0) return r;
  const Real keep_scale = Real(1) / static_cast<Real>(1.0 - rate);
  r.scale.resize(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.scale[i] = rng.uniform() < rate ? Real(0) : keep_scale;
    r.output[i] *= r.scale[i];
  }
  return r;
}

template <typename Real>
Tensor<Real> dropout_backward(Tensor<Real> grad, const std::vector<Real>& scale) {
  if (scale.empty()) return grad;
  if (scale.size() != grad.size()) throw Error("dropout_backward: shape mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= scale[i];
  return grad;
}

}  // namespace convtext

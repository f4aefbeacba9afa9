#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "convtext/config.hpp"
#include "convtext/error.hpp"
#include "convtext/extractor.hpp"
#include "convtext/ops.hpp"
#include "convtext/rng.hpp"
#include "convtext/tensor.hpp"

namespace convtext {

/// Linear classifier head on top of the text representation.
template <typename Real = double>
class Classifier {
 public:
  Classifier() = default;

  Classifier(std::size_t in_dim, std::size_t num_classes, std::uint64_t seed) {
    if (in_dim < 1 || num_classes < 1) throw Error("classifier dims must be >= 1");
    Rng rng(seed);
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + num_classes));
    Tensor<Real> w({num_classes, in_dim});
    for (auto& v : w.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
    params_.push_back({"head.weight", std::move(w), false});
    params_.push_back({"head.bias", Tensor<Real>({num_classes}), false});
  }

  static Classifier from_parameters(std::vector<Parameter<Real>> params) {
    if (params.size() != 2 || params[0].name != "head.weight" || params[1].name != "head.bias" ||
        params[0].value.rank() != 2 || params[1].value.rank() != 1 ||
        params[0].value.dim(0) != params[1].value.dim(0)) {
      throw Error("malformed classifier parameters");
    }
    Classifier c;
    c.params_ = std::move(params);
    return c;
  }

  std::size_t num_classes() const { return params_.at(0).value.dim(0); }
  std::size_t in_dim() const { return params_.at(0).value.dim(1); }
  const std::vector<Parameter<Real>>& parameters() const { return params_; }
  std::vector<Parameter<Real>>& mutable_parameters() { return params_; }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    return linear_forward(x, params_[0].value, params_[1].value);
  }

  /// Returns {grad wrt input, [grad weight, grad bias]}.
  std::pair<Tensor<Real>, Gradients<Real>> backward(const Tensor<Real>& grad_logits,
                                                    const Tensor<Real>& x) const {
    auto g = linear_backward(grad_logits, x, params_[0].value);
    Gradients<Real> grads;
    grads.push_back(std::move(g.weights));
    grads.push_back(std::move(g.bias));
    return {std::move(g.input), std::move(grads)};
  }

 private:
  std::vector<Parameter<Real>> params_;
};

/// Extractor plus classifier head: the unit that is trained and saved.
template <typename Real = double>
struct Model {
  Extractor<Real> extractor;
  Classifier<Real> head;

  Model(Extractor<Real> e, Classifier<Real> h) : extractor(std::move(e)), head(std::move(h)) {
    if (head.in_dim() != extractor.output_dim()) {
      throw Error("classifier input dim does not match extractor output");
    }
  }

  Model(const ExtractorConfig& config, std::size_t num_classes, std::uint64_t seed)
      : extractor(config, seed), head(config.output_dim(), num_classes, seed ^ 0x9e3779b97f4a7c15ULL) {}

  Tensor<Real> logits(const ModelInput& in) const { return head.forward(extractor.forward(in)); }

  /// Argmax class; ties go to the lowest index.
  std::size_t predict(const ModelInput& in) const {
    const auto l = logits(in);
    std::size_t best = 0;
    for (std::size_t i = 1; i < l.size(); ++i) {
      if (l[i] > l[best]) best = i;
    }
    return best;
  }

  /// Every parameter, extractor first, then head.
  std::vector<Parameter<Real>*> all_parameters() {
    std::vector<Parameter<Real>*> out;
    for (auto& p : extractor.mutable_parameters()) out.push_back(&p);
    for (auto& p : head.mutable_parameters()) out.push_back(&p);
    return out;
  }

  std::vector<const Parameter<Real>*> all_parameters() const {
    std::vector<const Parameter<Real>*> out;
    for (const auto& p : extractor.parameters()) out.push_back(&p);
    for (const auto& p : head.parameters()) out.push_back(&p);
    return out;
  }
};

// --------------------------------------------------------------- checkpoint

inline constexpr std::string_view kCheckpointMagic = "convtext-checkpoint v1";

/// Text manifest (config keys, then one `param <name> <dims...>` line per
/// tensor, then `end-manifest`), followed by each tensor in the binary
/// tensor serialization, in manifest order.
template <typename Real>
void save_checkpoint(std::ostream& os, const Model<Real>& model) {
  os << kCheckpointMagic << '\n';
  for (const auto& [k, v] : model.extractor.config().to_map()) os << k << " = " << v << '\n';
  os << "head.classes = " << model.head.num_classes() << '\n';
  const auto params = model.all_parameters();
  for (const auto* p : params) {
    os << "param " << p->name;
    for (auto d : p->value.shape()) os << ' ' << d;
    os << '\n';
  }
  os << "end-manifest\n";
  for (const auto* p : params) write_tensor(os, p->value);
}

template <typename Real>
void save_checkpoint(const std::string& path, const Model<Real>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path);
  save_checkpoint(os, model);
}

template <typename Real = double>
Model<Real> load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw Error("not a convtext checkpoint");
  std::map<std::string, std::string> kv;
  std::vector<std::pair<std::string, Shape>> manifest;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end-manifest") {
      ended = true;
      break;
    }
    if (line.rfind("param ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      std::string name;
      ls >> name;
      Shape shape;
      std::size_t d;
      while (ls >> d) shape.push_back(d);
      manifest.emplace_back(name, shape);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("malformed checkpoint manifest line: " + line);
    kv[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  if (!ended) throw Error("checkpoint manifest is truncated");
  ExtractorConfig config;
  config.apply(kv);
  std::vector<Parameter<Real>> ext_params, head_params;
  for (const auto& [name, shape] : manifest) {
    auto t = read_tensor<Real>(is);
    if (t.shape() != shape) throw Error("checkpoint tensor " + name + " has wrong shape");
    (name.rfind("head.", 0) == 0 ? head_params : ext_params)
        .push_back({name, std::move(t), name.rfind("embed.", 0) == 0});
  }
  Model<Real> m(Extractor<Real>::from_parameters(config, std::move(ext_params)),
                Classifier<Real>::from_parameters(std::move(head_params)));
  if (auto it = kv.find("head.classes");
      it == kv.end() || it->second != std::to_string(m.head.num_classes())) {
    throw Error("checkpoint head.classes does not match head tensors");
  }
  return m;
}

template <typename Real = double>
Model<Real> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path);
  return load_checkpoint<Real>(is);
}

}  // namespace convtext

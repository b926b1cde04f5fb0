#pragma once

#include <nnslicer/tensor.hpp>

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nnslicer {

enum class LayerKind { Input, Conv2D, FullyConnected, AvgPool2D, MaxPool2D, ReLU, Scale, Add, Flatten, Output };

inline std::string_view kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "Input";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::FullyConnected: return "FullyConnected";
    case LayerKind::AvgPool2D: return "AvgPool2D";
    case LayerKind::MaxPool2D: return "MaxPool2D";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Scale: return "Scale";
    case LayerKind::Add: return "Add";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Output: return "Output";
  }
  return "?";
}

inline std::optional<LayerKind> parse_kind(std::string_view s) {
  for (auto k : {LayerKind::Input, LayerKind::Conv2D, LayerKind::FullyConnected, LayerKind::AvgPool2D,
                 LayerKind::MaxPool2D, LayerKind::ReLU, LayerKind::Scale, LayerKind::Add, LayerKind::Flatten,
                 LayerKind::Output})
    if (kind_name(k) == s) return k;
  return std::nullopt;
}

inline bool has_weights(LayerKind k) { return k == LayerKind::Conv2D || k == LayerKind::FullyConnected; }
inline bool is_pool(LayerKind k) { return k == LayerKind::AvgPool2D || k == LayerKind::MaxPool2D; }

// Kernel geometry shared by Conv2D and the pooling layers.
struct Window {
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  friend bool operator==(const Window&, const Window&) = default;
};

// Inference-form batch normalisation: y = gamma * (x - mean) / std + beta, per channel.
struct ScaleParams {
  Tensor mean, std, gamma, beta;
  friend bool operator==(const ScaleParams&, const ScaleParams&) = default;
};

struct LayerSpec {
  std::size_t index = 0;
  LayerKind kind = LayerKind::Input;
  std::vector<std::size_t> inputs;  // predecessor layer indices
  Window window;
  std::size_t units = 0;  // Conv2D output channels, FullyConnected output features
  std::optional<Tensor> weights;  // Conv2D [out, in, kh, kw]; FullyConnected [out, in]
  std::optional<Tensor> bias;     // [out]
  std::optional<ScaleParams> scale;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelGraph {
  std::vector<LayerSpec> layers;
  Shape input_shape;
  std::size_t class_count = 0;
  friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

// Activation geometry. Every activation is laid out channel-major as [C, H, W].
struct Dims {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t size() const noexcept { return c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::optional<Dims> input_dims(const Shape& s) {
  switch (s.size()) {
    case 1: return Dims{s[0], 1, 1};
    case 2: return Dims{1, s[0], s[1]};
    case 3: return Dims{s[0], s[1], s[2]};
    default: return std::nullopt;
  }
}

struct NeuronId {
  std::uint32_t layer = 0;
  std::uint32_t unit = 0;
  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

struct SynapseId {
  std::uint32_t layer = 0;
  std::uint32_t out_unit = 0;
  std::uint32_t in_unit = 0;
  std::uint32_t k_row = 0;
  std::uint32_t k_col = 0;
  friend auto operator<=>(const SynapseId&, const SynapseId&) = default;
};

struct Violation {
  std::optional<std::size_t> layer;
  std::string message;
};

inline std::string describe(const Violation& v) {
  return v.layer ? "layer " + std::to_string(*v.layer) + ": " + v.message : v.message;
}

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<Violation> v)
      : std::runtime_error(join(v)), violations_(std::move(v)) {}
  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<Violation>& v) {
    std::string s = "invalid model";
    for (const auto& x : v) s += "; " + describe(x);
    return s;
  }
  std::vector<Violation> violations_;
};

namespace detail {

inline std::optional<std::size_t> window_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (k == 0 || s == 0 || in + 2 * p < k) return std::nullopt;
  return (in + 2 * p - k) / s + 1;
}

inline bool tensor_shape_is(const std::optional<Tensor>& t, const Shape& s) { return t && t->shape() == s; }

// Shape inference that records violations instead of throwing. Output dims of
// layers that failed inference are left empty.
inline std::vector<std::optional<Dims>> infer(const ModelGraph& m, std::vector<Violation>& out) {
  std::vector<std::optional<Dims>> dims(m.layers.size());
  auto bad = [&](std::size_t i, std::string msg) { out.push_back({i, std::move(msg)}); };

  auto in = input_dims(m.input_shape);
  if (!in || in->size() == 0) out.push_back({std::nullopt, "input shape must have rank 1..3 with positive dims"});
  if (m.layers.empty()) {
    out.push_back({std::nullopt, "model has no layers"});
    return dims;
  }
  if (m.class_count < 1) out.push_back({std::nullopt, "class_count must be positive"});

  std::size_t inputs = 0, outputs = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& L = m.layers[i];
    if (L.index != i) bad(i, "layer index field " + std::to_string(L.index) + " does not match position");
    if (L.kind == LayerKind::Input) ++inputs;
    if (L.kind == LayerKind::Output) ++outputs;

    if (L.kind == LayerKind::Input) {
      if (i != 0) bad(i, "Input layer must be first");
      if (!L.inputs.empty()) bad(i, "Input layer takes no predecessors");
      if (in && in->size()) dims[i] = *in;
      continue;
    }
    std::size_t need = L.kind == LayerKind::Add ? 2 : 1;
    if (L.inputs.size() < need || (L.kind != LayerKind::Add && L.inputs.size() != 1)) {
      bad(i, std::string(kind_name(L.kind)) + " has " + std::to_string(L.inputs.size()) + " predecessors");
      continue;
    }
    bool ok = true;
    for (auto p : L.inputs) {
      if (p >= i) {
        bad(i, "cycle: predecessor " + std::to_string(p) + " is not earlier in topological order");
        ok = false;
      } else if (!dims[p]) {
        ok = false;
      } else if (m.layers[p].kind == LayerKind::Flatten &&
                 !(L.kind == LayerKind::FullyConnected || L.kind == LayerKind::Flatten ||
                   L.kind == LayerKind::Output)) {
        bad(i, std::string(kind_name(L.kind)) + " cannot consume a Flatten output");
        ok = false;
      }
    }
    if (!ok) continue;
    const Dims x = *dims[L.inputs[0]];
    const auto& W = L.window;

    if (!has_weights(L.kind) && (L.weights || L.bias)) bad(i, "weightless layer carries weights");
    if (L.kind != LayerKind::Scale && L.scale) bad(i, "only Scale layers carry scale parameters");

    switch (L.kind) {
      case LayerKind::Conv2D: {
        auto oh = window_out(x.h, W.kernel_h, W.stride_h, W.pad_h);
        auto ow = window_out(x.w, W.kernel_w, W.stride_w, W.pad_w);
        if (!oh || !ow || L.units == 0) {
          bad(i, "conv window does not fit input " + std::to_string(x.h) + "x" + std::to_string(x.w));
          break;
        }
        Shape ws{L.units, x.c, W.kernel_h, W.kernel_w};
        if (!tensor_shape_is(L.weights, ws)) {
          bad(i, "shape mismatch: conv weights " + (L.weights ? shape_string(L.weights->shape()) : "missing") +
                     ", expected " + shape_string(ws));
          break;
        }
        if (L.bias && L.bias->shape() != Shape{L.units}) {
          bad(i, "shape mismatch: bias " + shape_string(L.bias->shape()));
          break;
        }
        dims[i] = Dims{L.units, *oh, *ow};
        break;
      }
      case LayerKind::FullyConnected: {
        Shape ws{L.units, x.size()};
        if (L.units == 0 || !tensor_shape_is(L.weights, ws)) {
          bad(i, "shape mismatch: fully connected weights " +
                     (L.weights ? shape_string(L.weights->shape()) : "missing") + " fed a " +
                     std::to_string(x.size()) + "-vector, expected " + shape_string(ws));
          break;
        }
        if (L.bias && L.bias->shape() != Shape{L.units}) {
          bad(i, "shape mismatch: bias " + shape_string(L.bias->shape()));
          break;
        }
        dims[i] = Dims{L.units, 1, 1};
        break;
      }
      case LayerKind::AvgPool2D:
      case LayerKind::MaxPool2D: {
        auto oh = window_out(x.h, W.kernel_h, W.stride_h, W.pad_h);
        auto ow = window_out(x.w, W.kernel_w, W.stride_w, W.pad_w);
        if (!oh || !ow || W.pad_h >= W.kernel_h || W.pad_w >= W.kernel_w) {
          bad(i, "pool window does not fit input");
          break;
        }
        dims[i] = Dims{x.c, *oh, *ow};
        break;
      }
      case LayerKind::ReLU: dims[i] = x; break;
      case LayerKind::Scale: {
        if (!L.scale) {
          bad(i, "Scale layer missing parameters");
          break;
        }
        const auto& s = *L.scale;
        Shape cs{x.c};
        if (s.mean.shape() != cs || s.std.shape() != cs || s.gamma.shape() != cs || s.beta.shape() != cs) {
          bad(i, "shape mismatch: scale parameters must be [" + std::to_string(x.c) + "]");
          break;
        }
        bool pos = std::all_of(s.std.data().begin(), s.std.data().end(), [](float v) { return v > 0.0f; });
        if (!pos) {
          bad(i, "scale sigma must be > 0 in every channel");
          break;
        }
        dims[i] = x;
        break;
      }
      case LayerKind::Add: {
        bool same = true;
        for (auto p : L.inputs) same = same && *dims[p] == x;
        if (!same) {
          bad(i, "shape mismatch: Add operands differ");
          break;
        }
        dims[i] = x;
        break;
      }
      case LayerKind::Flatten: dims[i] = Dims{x.size(), 1, 1}; break;
      case LayerKind::Output: {
        const auto& P = m.layers[L.inputs[0]];
        if (P.kind != LayerKind::FullyConnected || P.units != m.class_count) {
          bad(i, "Output must follow a FullyConnected layer producing class_count logits");
          break;
        }
        if (i + 1 != m.layers.size()) bad(i, "Output layer must be last");
        dims[i] = x;
        break;
      }
      case LayerKind::Input: break;
    }
    for (const auto* t : {&L.weights, &L.bias})
      if (*t && !(*t)->all_finite()) bad(i, "non-finite parameter values");
    if (L.scale)
      for (const auto* t : {&L.scale->mean, &L.scale->std, &L.scale->gamma, &L.scale->beta})
        if (!t->all_finite()) bad(i, "non-finite parameter values");
  }
  if (inputs != 1) out.push_back({std::nullopt, "model must have exactly one Input layer"});
  if (outputs != 1) out.push_back({std::nullopt, "model must have exactly one Output layer"});
  return dims;
}

}  // namespace detail

inline std::vector<Violation> validate(const ModelGraph& m) {
  std::vector<Violation> v;
  detail::infer(m, v);
  return v;
}

inline void require_valid(const ModelGraph& m) {
  auto v = validate(m);
  if (!v.empty()) throw ValidationError(std::move(v));
}

inline std::vector<Dims> infer_dims(const ModelGraph& m) {
  std::vector<Violation> v;
  auto d = detail::infer(m, v);
  if (!v.empty()) throw ValidationError(std::move(v));
  std::vector<Dims> out;
  out.reserve(d.size());
  for (auto& x : d) out.push_back(*x);
  return out;
}

// Neuron and synapse numbering for a validated graph.
//
// A neuron is one output channel (or FC unit) of a layer; a Flatten layer keeps
// the channel neurons of its input so that flattening is pure reindexing. Every
// activation element belongs to exactly one neuron: element e of layer l sits in
// neuron e / group_size(l). Synapses are weight-tensor elements; biases are not
// synapses.
class ModelIndex {
 public:
  explicit ModelIndex(const ModelGraph& m) : dims_(infer_dims(m)) {
    std::size_t n = 0, s = 0;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      const auto& L = m.layers[i];
      std::size_t group = dims_[i].plane();
      if (L.kind == LayerKind::Flatten) group = group_[L.inputs[0]];
      group_.push_back(group);
      std::size_t count = dims_[i].size() / group;
      neuron_offset_.push_back(n);
      neuron_count_.push_back(count);
      n += count;
      std::size_t sc = L.weights ? L.weights->size() : 0;
      synapse_offset_.push_back(s);
      synapse_count_.push_back(sc);
      s += sc;
      kernel_.push_back(L.kind == LayerKind::Conv2D ? L.window.kernel_h * L.window.kernel_w : 1);
      kernel_w_.push_back(L.kind == LayerKind::Conv2D ? L.window.kernel_w : 1);
      fan_in_.push_back(L.weights ? L.weights->shape()[1] : 0);
    }
    total_neurons_ = n;
    total_synapses_ = s;
  }

  std::size_t layer_count() const noexcept { return dims_.size(); }
  const Dims& dims(std::size_t layer) const { return dims_[layer]; }
  const std::vector<Dims>& all_dims() const noexcept { return dims_; }
  std::size_t group_size(std::size_t layer) const { return group_[layer]; }

  std::size_t neuron_count() const noexcept { return total_neurons_; }
  std::size_t synapse_count() const noexcept { return total_synapses_; }
  std::size_t neuron_count(std::size_t layer) const { return neuron_count_[layer]; }
  std::size_t synapse_count(std::size_t layer) const { return synapse_count_[layer]; }
  std::size_t neuron_offset(std::size_t layer) const { return neuron_offset_[layer]; }
  std::size_t synapse_offset(std::size_t layer) const { return synapse_offset_[layer]; }

  std::size_t flat(NeuronId n) const { return neuron_offset_[n.layer] + n.unit; }

  std::size_t flat(SynapseId s) const {
    std::size_t k = kernel_[s.layer];
    return synapse_offset_[s.layer] + ((std::size_t{s.out_unit} * fan_in_[s.layer] + s.in_unit) * k) +
           std::size_t{s.k_row} * kernel_w_[s.layer] + s.k_col;
  }

  NeuronId neuron_at(std::size_t flat_index) const {
    auto l = locate(neuron_offset_, flat_index);
    return {static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(flat_index - neuron_offset_[l])};
  }

  SynapseId synapse_at(std::size_t flat_index) const {
    auto l = locate(synapse_offset_, flat_index);
    std::size_t r = flat_index - synapse_offset_[l];
    std::size_t k = kernel_[l], kw = kernel_w_[l];
    std::size_t pos = r % k, rest = r / k;
    return {static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(rest / fan_in_[l]),
            static_cast<std::uint32_t>(rest % fan_in_[l]), static_cast<std::uint32_t>(pos / kw),
            static_cast<std::uint32_t>(pos % kw)};
  }

  bool contains(NeuronId n) const { return n.layer < layer_count() && n.unit < neuron_count_[n.layer]; }

  bool contains(SynapseId s) const {
    if (s.layer >= layer_count() || synapse_count_[s.layer] == 0) return false;
    std::size_t kh = kernel_[s.layer] / kernel_w_[s.layer];
    return s.out_unit < synapse_count_[s.layer] / (fan_in_[s.layer] * kernel_[s.layer]) &&
           s.in_unit < fan_in_[s.layer] && s.k_row < kh && s.k_col < kernel_w_[s.layer];
  }

 private:
  // Last layer whose offset is <= flat_index and which is non-empty.
  static std::size_t locate(const std::vector<std::size_t>& offsets, std::size_t flat_index) {
    auto it = std::upper_bound(offsets.begin(), offsets.end(), flat_index);
    return static_cast<std::size_t>(it - offsets.begin()) - 1;
  }

  std::vector<Dims> dims_;
  std::vector<std::size_t> group_, neuron_offset_, neuron_count_, synapse_offset_, synapse_count_;
  std::vector<std::size_t> kernel_, kernel_w_, fan_in_;
  std::size_t total_neurons_ = 0, total_synapses_ = 0;
};

inline std::vector<NeuronId> enumerate_neurons(const ModelGraph& m) {
  ModelIndex idx(m);
  std::vector<NeuronId> out;
  out.reserve(idx.neuron_count());
  for (std::size_t l = 0; l < idx.layer_count(); ++l)
    for (std::size_t u = 0; u < idx.neuron_count(l); ++u)
      out.push_back({static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(u)});
  return out;
}

inline std::vector<SynapseId> enumerate_synapses(const ModelGraph& m) {
  ModelIndex idx(m);
  std::vector<SynapseId> out;
  out.reserve(idx.synapse_count());
  for (std::size_t i = 0; i < idx.synapse_count(); ++i) out.push_back(idx.synapse_at(i));
  return out;
}

// Index of the last FullyConnected layer (the one feeding Output).
inline std::size_t logit_layer(const ModelGraph& m) { return m.layers.back().inputs.at(0); }
inline std::size_t output_layer(const ModelGraph& m) { return m.layers.size() - 1; }

}  // namespace nnslicer

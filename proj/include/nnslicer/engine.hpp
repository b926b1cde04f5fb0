#pragma once

// Forward execution with activation tracing, exact reverse-mode gradients and a
// plain SGD trainer. The scalar type is a template parameter: float is the
// production path, double is used by gradient and equivalence checks.

#include <nnslicer/dataset.hpp>
#include <nnslicer/model.hpp>
#include <nnslicer/parallel.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnslicer {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Per-sample record of a forward pass: the spatial mean of every neuron's
// activations, in enumerate_neurons order.
struct ActivationTrace {
  std::vector<double> means;
  std::vector<std::uint32_t> activation_counts;
  // MaxPool layers: input element index selected for every output element.
  std::vector<std::vector<std::uint32_t>> maxpool_argmax;
  Tensor logits;
  std::size_t predicted = 0;
};

struct ForwardResult {
  Tensor logits;
  std::optional<ActivationTrace> trace;
};

// Lowest index wins ties.
template <class It>
std::size_t argmax(It first, It last) {
  std::size_t best = 0, i = 0;
  auto bestv = *first;
  for (auto it = first; it != last; ++it, ++i)
    if (*it > bestv) {
      bestv = *it;
      best = i;
    }
  return best;
}

// Trainable-parameter mask. An absent vector means every element is trainable.
struct ParamMask {
  std::vector<std::optional<std::vector<std::uint8_t>>> weights, bias;
};

template <class T>
struct Gradients {
  double loss = 0;
  std::vector<std::vector<T>> weights, bias;  // per layer; empty for weightless layers
  std::vector<std::vector<T>> inputs;         // per sample
};

namespace detail {

// Output positions [lo, hi) whose input coordinate o*stride + k - pad lies in [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                       std::size_t pad, std::size_t k) {
  std::ptrdiff_t lo = 0;
  if (pad > k) lo = static_cast<std::ptrdiff_t>((pad - k + stride - 1) / stride);
  std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 + static_cast<std::ptrdiff_t>(pad) -
                       static_cast<std::ptrdiff_t>(k);
  if (top < 0) return {0, 0};
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out), top / static_cast<std::ptrdiff_t>(stride) + 1);
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

// A ModelGraph with parameters converted to scalar type T, ready to execute.
template <class T>
class Network {
 public:
  explicit Network(const ModelGraph& m) : graph_(&m), index_(m) {
    weights_.resize(m.layers.size());
    bias_.resize(m.layers.size());
    for (const auto& L : m.layers) {
      if (L.weights) weights_[L.index].assign(L.weights->data().begin(), L.weights->data().end());
      if (L.bias) bias_[L.index].assign(L.bias->data().begin(), L.bias->data().end());
      else if (has_weights(L.kind)) bias_[L.index].assign(L.units, T(0));
    }
  }

  const ModelGraph& graph() const noexcept { return *graph_; }
  const ModelIndex& index() const noexcept { return index_; }
  std::vector<T>& weights(std::size_t l) { return weights_[l]; }
  std::vector<T>& bias(std::size_t l) { return bias_[l]; }
  const std::vector<T>& weights(std::size_t l) const { return weights_[l]; }
  const std::vector<T>& bias(std::size_t l) const { return bias_[l]; }

  // Writes the (possibly trained) parameters back as float32.
  ModelGraph export_graph() const {
    ModelGraph m = *graph_;
    for (auto& L : m.layers) {
      if (L.weights)
        for (std::size_t i = 0; i < L.weights->size(); ++i) (*L.weights)[i] = static_cast<float>(weights_[L.index][i]);
      if (L.bias)
        for (std::size_t i = 0; i < L.bias->size(); ++i) (*L.bias)[i] = static_cast<float>(bias_[L.index][i]);
    }
    return m;
  }

  struct State {
    std::vector<std::vector<T>> act;
    std::vector<std::vector<std::uint32_t>> argmax;
    std::vector<std::vector<T>> grad;
  };

  void forward(std::span<const float> x, State& st) const {
    const auto& m = *graph_;
    const auto& dims = index_.all_dims();
    if (x.size() != dims[0].size())
      throw ShapeError("input has " + std::to_string(x.size()) + " elements, model expects " +
                       std::to_string(dims[0].size()));
    st.act.resize(m.layers.size());
    st.argmax.resize(m.layers.size());
    for (const auto& L : m.layers) {
      auto& out = st.act[L.index];
      out.resize(dims[L.index].size());
      if (L.kind == LayerKind::Input) {
        std::copy(x.begin(), x.end(), out.begin());
        continue;
      }
      const auto& in = st.act[L.inputs[0]];
      const Dims& id = dims[L.inputs[0]];
      const Dims& od = dims[L.index];
      switch (L.kind) {
        case LayerKind::Conv2D: conv_forward(L, in, id, od, out); break;
        case LayerKind::FullyConnected: {
          const auto& w = weights_[L.index];
          const auto& b = bias_[L.index];
          std::size_t n = in.size();
          for (std::size_t o = 0; o < od.c; ++o) {
            T acc = b[o];
            const T* row = w.data() + o * n;
            for (std::size_t j = 0; j < n; ++j) acc += row[j] * in[j];
            out[o] = acc;
          }
          break;
        }
        case LayerKind::MaxPool2D: maxpool_forward(L, in, id, od, out, st.argmax[L.index]); break;
        case LayerKind::AvgPool2D: avgpool_forward(L, in, id, od, out); break;
        case LayerKind::ReLU:
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
          break;
        case LayerKind::Scale: {
          const auto& s = *L.scale;
          for (std::size_t c = 0; c < od.c; ++c) {
            T mu = s.mean[c], sd = s.std[c], g = s.gamma[c], be = s.beta[c];
            for (std::size_t p = 0; p < od.plane(); ++p) out[c * od.plane() + p] = (in[c * od.plane() + p] - mu) / sd * g + be;
          }
          break;
        }
        case LayerKind::Add:
          std::copy(in.begin(), in.end(), out.begin());
          for (std::size_t k = 1; k < L.inputs.size(); ++k) {
            const auto& other = st.act[L.inputs[k]];
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += other[i];
          }
          break;
        case LayerKind::Flatten:
        case LayerKind::Output: std::copy(in.begin(), in.end(), out.begin()); break;
        case LayerKind::Input: break;
      }
      for (auto v : out)
        if (!std::isfinite(static_cast<double>(v)))
          throw NumericError("non-finite activation at layer " + std::to_string(L.index));
    }
  }

  // Backpropagates d(loss)/d(logits) through the recorded state. Parameter
  // gradients are accumulated into g (which must be sized by zero_gradients).
  void backward(State& st, std::span<const T> dlogits, Gradients<T>& g, std::vector<T>* dinput) const {
    const auto& m = *graph_;
    const auto& dims = index_.all_dims();
    st.grad.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) st.grad[l].assign(dims[l].size(), T(0));
    auto& top = st.grad.back();
    std::copy(dlogits.begin(), dlogits.end(), top.begin());
    for (std::size_t li = m.layers.size(); li-- > 1;) {
      const auto& L = m.layers[li];
      const auto& dy = st.grad[li];
      const Dims& od = dims[li];
      const std::size_t p0 = L.inputs[0];
      const Dims& id = dims[p0];
      auto& dx = st.grad[p0];
      const auto& x = st.act[p0];
      switch (L.kind) {
        case LayerKind::Conv2D: conv_backward(L, x, id, od, dy, dx, g.weights[li], g.bias[li]); break;
        case LayerKind::FullyConnected: {
          const auto& w = weights_[li];
          std::size_t n = x.size();
          auto& gw = g.weights[li];
          auto& gb = g.bias[li];
          for (std::size_t o = 0; o < od.c; ++o) {
            T d = dy[o];
            gb[o] += d;
            if (d == T(0)) continue;
            T* grow = gw.data() + o * n;
            const T* wrow = w.data() + o * n;
            for (std::size_t j = 0; j < n; ++j) {
              grow[j] += d * x[j];
              dx[j] += wrow[j] * d;
            }
          }
          break;
        }
        case LayerKind::MaxPool2D: {
          const auto& am = st.argmax[li];
          for (std::size_t i = 0; i < dy.size(); ++i) dx[am[i]] += dy[i];
          break;
        }
        case LayerKind::AvgPool2D: avgpool_backward(L, id, od, dy, dx); break;
        case LayerKind::ReLU:
          for (std::size_t i = 0; i < dy.size(); ++i)
            if (x[i] > T(0)) dx[i] += dy[i];
          break;
        case LayerKind::Scale: {
          const auto& s = *L.scale;
          for (std::size_t c = 0; c < od.c; ++c) {
            T f = T(s.gamma[c]) / T(s.std[c]);
            for (std::size_t p = 0; p < od.plane(); ++p) dx[c * od.plane() + p] += dy[c * od.plane() + p] * f;
          }
          break;
        }
        case LayerKind::Add:
          for (auto p : L.inputs) {
            auto& d = st.grad[p];
            for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
          }
          break;
        case LayerKind::Flatten:
        case LayerKind::Output:
          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
          break;
        case LayerKind::Input: break;
      }
    }
    if (dinput) *dinput = st.grad[0];
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g;
    g.weights.resize(weights_.size());
    g.bias.resize(bias_.size());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      g.weights[l].assign(weights_[l].size(), T(0));
      g.bias[l].assign(bias_[l].size(), T(0));
    }
    return g;
  }

 private:
  // Flat input index of output row oy, kernel tap (kr, kc) at output column 0.
  static std::ptrdiff_t in_offset(std::size_t oy, std::size_t kr, std::size_t kc, const Window& W, const Dims& id) {
    auto row = static_cast<std::ptrdiff_t>(oy * W.stride_h + kr) - static_cast<std::ptrdiff_t>(W.pad_h);
    return row * static_cast<std::ptrdiff_t>(id.w) + static_cast<std::ptrdiff_t>(kc) -
           static_cast<std::ptrdiff_t>(W.pad_w);
  }

  void conv_forward(const LayerSpec& L, const std::vector<T>& in, const Dims& id, const Dims& od,
                    std::vector<T>& out) const {
    const auto& w = weights_[L.index];
    const auto& b = bias_[L.index];
    const auto& W = L.window;
    for (std::size_t o = 0; o < od.c; ++o) {
      T* plane = out.data() + o * od.plane();
      std::fill(plane, plane + od.plane(), b[o]);
      for (std::size_t ic = 0; ic < id.c; ++ic) {
        const T* src = in.data() + ic * id.plane();
        for (std::size_t kr = 0; kr < W.kernel_h; ++kr) {
          auto [ylo, yhi] = detail::valid_range(od.h, id.h, W.stride_h, W.pad_h, kr);
          for (std::size_t kc = 0; kc < W.kernel_w; ++kc) {
            T wv = w[((o * id.c + ic) * W.kernel_h + kr) * W.kernel_w + kc];
            auto [xlo, xhi] = detail::valid_range(od.w, id.w, W.stride_w, W.pad_w, kc);
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              std::ptrdiff_t base = in_offset(oy, kr, kc, W, id);
              T* drow = plane + oy * od.w;
              if (W.stride_w == 1)
                for (std::size_t ox = xlo; ox < xhi; ++ox) drow[ox] += wv * src[base + static_cast<std::ptrdiff_t>(ox)];
              else
                for (std::size_t ox = xlo; ox < xhi; ++ox)
                  drow[ox] += wv * src[base + static_cast<std::ptrdiff_t>(ox * W.stride_w)];
            }
          }
        }
      }
    }
  }

  void conv_backward(const LayerSpec& L, const std::vector<T>& in, const Dims& id, const Dims& od,
                     const std::vector<T>& dy, std::vector<T>& dx, std::vector<T>& gw, std::vector<T>& gb) const {
    const auto& w = weights_[L.index];
    const auto& W = L.window;
    for (std::size_t o = 0; o < od.c; ++o) {
      const T* dplane = dy.data() + o * od.plane();
      T s = 0;
      for (std::size_t p = 0; p < od.plane(); ++p) s += dplane[p];
      gb[o] += s;
      for (std::size_t ic = 0; ic < id.c; ++ic) {
        const T* src = in.data() + ic * id.plane();
        T* dsrc = dx.data() + ic * id.plane();
        for (std::size_t kr = 0; kr < W.kernel_h; ++kr) {
          auto [ylo, yhi] = detail::valid_range(od.h, id.h, W.stride_h, W.pad_h, kr);
          for (std::size_t kc = 0; kc < W.kernel_w; ++kc) {
            std::size_t wi = ((o * id.c + ic) * W.kernel_h + kr) * W.kernel_w + kc;
            T wv = w[wi];
            T acc = 0;
            auto [xlo, xhi] = detail::valid_range(od.w, id.w, W.stride_w, W.pad_w, kc);
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              std::ptrdiff_t base = in_offset(oy, kr, kc, W, id);
              const T* grow = dplane + oy * od.w;
              for (std::size_t ox = xlo; ox < xhi; ++ox) {
                std::ptrdiff_t ii = base + static_cast<std::ptrdiff_t>(ox * W.stride_w);
                acc += grow[ox] * src[ii];
                dsrc[ii] += wv * grow[ox];
              }
            }
            gw[wi] += acc;
          }
        }
      }
    }
  }

  void maxpool_forward(const LayerSpec& L, const std::vector<T>& in, const Dims& id, const Dims& od,
                       std::vector<T>& out, std::vector<std::uint32_t>& am) const {
    const auto& W = L.window;
    am.resize(out.size());
    for (std::size_t c = 0; c < od.c; ++c)
      for (std::size_t oy = 0; oy < od.h; ++oy)
        for (std::size_t ox = 0; ox < od.w; ++ox) {
          bool any = false;
          T best = 0;
          std::size_t bi = 0;
          for (std::size_t kr = 0; kr < W.kernel_h; ++kr) {
            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * W.stride_h + kr) - static_cast<std::ptrdiff_t>(W.pad_h);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(id.h)) continue;
            for (std::size_t kc = 0; kc < W.kernel_w; ++kc) {
              std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * W.stride_w + kc) - static_cast<std::ptrdiff_t>(W.pad_w);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(id.w)) continue;
              std::size_t ii = c * id.plane() + static_cast<std::size_t>(iy) * id.w + static_cast<std::size_t>(ix);
              if (!any || in[ii] > best) {
                best = in[ii];
                bi = ii;
                any = true;
              }
            }
          }
          std::size_t oi = (c * od.h + oy) * od.w + ox;
          out[oi] = best;
          am[oi] = static_cast<std::uint32_t>(bi);
        }
  }

  template <class F>
  void for_pool_windows(const LayerSpec& L, const Dims& id, const Dims& od, F&& f) const {
    const auto& W = L.window;
    for (std::size_t c = 0; c < od.c; ++c)
      for (std::size_t oy = 0; oy < od.h; ++oy)
        for (std::size_t ox = 0; ox < od.w; ++ox) {
          std::size_t y0 = oy * W.stride_h, x0 = ox * W.stride_w;
          std::size_t ylo = y0 < W.pad_h ? 0 : y0 - W.pad_h;
          std::size_t xlo = x0 < W.pad_w ? 0 : x0 - W.pad_w;
          std::size_t yhi = std::min(id.h, y0 + W.kernel_h - W.pad_h);
          std::size_t xhi = std::min(id.w, x0 + W.kernel_w - W.pad_w);
          f(c, (c * od.h + oy) * od.w + ox, ylo, yhi, xlo, xhi);
        }
  }

  void avgpool_forward(const LayerSpec& L, const std::vector<T>& in, const Dims& id, const Dims& od,
                       std::vector<T>& out) const {
    for_pool_windows(L, id, od, [&](std::size_t c, std::size_t oi, std::size_t ylo, std::size_t yhi, std::size_t xlo,
                                    std::size_t xhi) {
      T s = 0;
      for (std::size_t y = ylo; y < yhi; ++y)
        for (std::size_t x = xlo; x < xhi; ++x) s += in[c * id.plane() + y * id.w + x];
      out[oi] = s / T((yhi - ylo) * (xhi - xlo));
    });
  }

  void avgpool_backward(const LayerSpec& L, const Dims& id, const Dims& od, const std::vector<T>& dy,
                        std::vector<T>& dx) const {
    for_pool_windows(L, id, od, [&](std::size_t c, std::size_t oi, std::size_t ylo, std::size_t yhi, std::size_t xlo,
                                    std::size_t xhi) {
      T d = dy[oi] / T((yhi - ylo) * (xhi - xlo));
      for (std::size_t y = ylo; y < yhi; ++y)
        for (std::size_t x = xlo; x < xhi; ++x) dx[c * id.plane() + y * id.w + x] += d;
    });
  }

  const ModelGraph* graph_;
  ModelIndex index_;
  std::vector<std::vector<T>> weights_, bias_;
};

// Per-neuron spatial means of a recorded forward state.
template <class T>
ActivationTrace make_trace(const Network<T>& net, const typename Network<T>::State& st) {
  const auto& idx = net.index();
  ActivationTrace tr;
  tr.means.resize(idx.neuron_count());
  tr.activation_counts.resize(idx.neuron_count());
  for (std::size_t l = 0; l < idx.layer_count(); ++l) {
    const auto& a = st.act[l];
    std::size_t g = idx.group_size(l);
    for (std::size_t u = 0; u < idx.neuron_count(l); ++u) {
      double s = 0;
      for (std::size_t k = 0; k < g; ++k) s += static_cast<double>(a[u * g + k]);
      tr.means[idx.neuron_offset(l) + u] = s / static_cast<double>(g);
      tr.activation_counts[idx.neuron_offset(l) + u] = static_cast<std::uint32_t>(g);
    }
  }
  tr.maxpool_argmax = st.argmax;
  const auto& logits = st.act.back();
  tr.logits = Tensor(Shape{logits.size()});
  for (std::size_t i = 0; i < logits.size(); ++i) tr.logits[i] = static_cast<float>(logits[i]);
  tr.predicted = argmax(logits.begin(), logits.end());
  return tr;
}

template <class T = float>
ForwardResult forward(const ModelGraph& m, const Tensor& x, bool record) {
  Network<T> net(m);
  typename Network<T>::State st;
  net.forward(x.data(), st);
  ForwardResult r;
  const auto& logits = st.act.back();
  r.logits = Tensor(Shape{logits.size()});
  for (std::size_t i = 0; i < logits.size(); ++i) r.logits[i] = static_cast<float>(logits[i]);
  if (record) r.trace = make_trace(net, st);
  return r;
}

// Mean softmax cross-entropy and its gradient w.r.t. the logits of one sample.
template <class T>
double softmax_xent(std::span<const T> logits, std::size_t label, std::span<T> dlogits, T scale) {
  T mx = logits[0];
  for (auto v : logits) mx = std::max(mx, v);
  T z = 0;
  for (auto v : logits) z += std::exp(v - mx);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    T p = std::exp(logits[i] - mx) / z;
    dlogits[i] = (p - (i == label ? T(1) : T(0))) * scale;
  }
  return static_cast<double>(std::log(z) + mx - logits[label]);
}

// Gradients of the mean cross-entropy over the batch w.r.t. every weight, bias and input.
template <class T>
Gradients<T> loss_and_gradients(const Network<T>& net, std::span<const Tensor* const> batch,
                                std::span<const std::size_t> labels, bool want_inputs = true) {
  if (batch.size() != labels.size() || batch.empty()) throw ShapeError("batch and labels must be non-empty and aligned");
  auto g = net.zero_gradients();
  typename Network<T>::State st;
  const std::size_t classes = net.graph().class_count;
  std::vector<T> dlogits(classes);
  T scale = T(1) / T(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (labels[i] >= classes) throw ShapeError("label out of range");
    net.forward(batch[i]->data(), st);
    g.loss += softmax_xent<T>(st.act.back(), labels[i], dlogits, scale) / static_cast<double>(batch.size());
    std::vector<T> dx;
    net.backward(st, dlogits, g, want_inputs ? &dx : nullptr);
    if (want_inputs) g.inputs.push_back(std::move(dx));
  }
  return g;
}

template <class T = float>
Gradients<T> loss_and_gradients(const ModelGraph& m, std::span<const Tensor> batch, std::span<const std::size_t> labels) {
  Network<T> net(m);
  std::vector<const Tensor*> ptrs;
  for (const auto& t : batch) ptrs.push_back(&t);
  return loss_and_gradients(net, std::span<const Tensor* const>(ptrs), labels);
}

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;
};

class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

inline void check_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0) || !std::isfinite(cfg.learning_rate))
    throw std::invalid_argument("learning rate must be finite and non-negative");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

// Plain minibatch SGD on softmax cross-entropy. Frozen elements of `mask` keep
// their values exactly. Deterministic for a given seed.
inline ModelGraph sgd_train(const ModelGraph& m, const Dataset& d, const TrainConfig& cfg,
                            const ParamMask* mask = nullptr, TrainReport* report = nullptr) {
  check_config(cfg);
  if (d.empty()) throw std::invalid_argument("training set is empty");
  Network<float> net(m);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  const float lr = static_cast<float>(cfg.learning_rate);
  typename Network<float>::State st;
  std::vector<float> dlogits(m.class_count);
  auto g = net.zero_gradients();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (auto& v : g.weights) std::fill(v.begin(), v.end(), 0.0f);
      for (auto& v : g.bias) std::fill(v.begin(), v.end(), 0.0f);
      float scale = 1.0f / static_cast<float>(end - start);
      double batch_loss = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = d.samples[order[k]];
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= m.class_count)
          throw std::invalid_argument("training sample without a valid label");
        net.forward(s.input.data(), st);
        batch_loss += softmax_xent<float>(st.act.back(), static_cast<std::size_t>(s.label), dlogits, scale);
        net.backward(st, dlogits, g, nullptr);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged("training diverged: non-finite loss in epoch " + std::to_string(epoch));
      epoch_loss += batch_loss;
      if (lr == 0.0f) continue;
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& w = net.weights(l);
        auto& b = net.bias(l);
        const std::vector<std::uint8_t>* wm = mask && mask->weights.size() > l && mask->weights[l] ? &*mask->weights[l] : nullptr;
        const std::vector<std::uint8_t>* bm = mask && mask->bias.size() > l && mask->bias[l] ? &*mask->bias[l] : nullptr;
        for (std::size_t i = 0; i < w.size(); ++i)
          if (!wm || (*wm)[i]) w[i] -= lr * g.weights[l][i];
        if (!m.layers[l].bias) continue;
        for (std::size_t i = 0; i < b.size(); ++i)
          if (!bm || (*bm)[i]) b[i] -= lr * g.bias[l][i];
      }
    }
    epoch_loss /= static_cast<double>(d.size());
    if (!std::isfinite(epoch_loss)) throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch));
    if (report) report->epoch_loss.push_back(epoch_loss);
  }
  auto out = net.export_graph();
  for (const auto& L : out.layers)
    for (const auto* t : {&L.weights, &L.bias})
      if (*t && !(*t)->all_finite()) throw TrainingDiverged("training produced non-finite weights");
  return out;
}

inline std::vector<std::size_t> predict(const ModelGraph& m, std::span<const Tensor> batch, WorkerPool* pool = nullptr) {
  Network<float> net(m);
  std::vector<std::size_t> out(batch.size());
  auto one = [&](std::size_t i) {
    typename Network<float>::State st;
    net.forward(batch[i].data(), st);
    out[i] = argmax(st.act.back().begin(), st.act.back().end());
  };
  if (pool) pool->parallel_for(batch.size(), one);
  else
    for (std::size_t i = 0; i < batch.size(); ++i) one(i);
  return out;
}

// Fraction of samples predicted correctly. With `classes`, only samples whose
// label is in the set count; prediction is still the argmax over all logits.
inline double evaluate(const ModelGraph& m, const Dataset& d, std::span<const std::size_t> classes = {},
                       WorkerPool* pool = nullptr) {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  for (const auto& s : d.samples) {
    if (!classes.empty() &&
        (s.label < 0 || std::find(classes.begin(), classes.end(), static_cast<std::size_t>(s.label)) == classes.end()))
      continue;
    inputs.push_back(s.input);
    labels.push_back(s.label);
  }
  if (inputs.empty()) throw std::invalid_argument("evaluation set is empty");
  auto pred = predict(m, inputs, pool);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += labels[i] >= 0 && pred[i] == static_cast<std::size_t>(labels[i]);
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace nnslicer

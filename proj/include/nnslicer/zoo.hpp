#pragma once

// Model builders: the LeNet-style network used for the digit experiments and
// small randomized graphs covering every operator kind for property tests.

#include <nnslicer/model.hpp>

#include <cmath>
#include <random>
#include <vector>

namespace nnslicer {

namespace detail {

inline Tensor uniform_tensor(Shape shape, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace detail

// Incremental builder that appends layers in topological order.
class GraphBuilder {
 public:
  GraphBuilder(Shape input_shape, std::size_t class_count) {
    m_.input_shape = std::move(input_shape);
    m_.class_count = class_count;
    LayerSpec in;
    in.kind = LayerKind::Input;
    push(std::move(in));
  }

  std::size_t last() const { return m_.layers.size() - 1; }

  std::size_t conv(std::size_t units, Tensor w, std::optional<Tensor> b, Window win, std::optional<std::size_t> from = {}) {
    LayerSpec L;
    L.kind = LayerKind::Conv2D;
    L.inputs = {from.value_or(last())};
    L.units = units;
    L.window = win;
    L.weights = std::move(w);
    L.bias = std::move(b);
    return push(std::move(L));
  }

  std::size_t fc(std::size_t units, Tensor w, std::optional<Tensor> b, std::optional<std::size_t> from = {}) {
    LayerSpec L;
    L.kind = LayerKind::FullyConnected;
    L.inputs = {from.value_or(last())};
    L.units = units;
    L.weights = std::move(w);
    L.bias = std::move(b);
    return push(std::move(L));
  }

  std::size_t pool(LayerKind kind, Window win, std::optional<std::size_t> from = {}) {
    LayerSpec L;
    L.kind = kind;
    L.inputs = {from.value_or(last())};
    L.window = win;
    return push(std::move(L));
  }

  std::size_t unary(LayerKind kind, std::optional<std::size_t> from = {}) {
    LayerSpec L;
    L.kind = kind;
    L.inputs = {from.value_or(last())};
    return push(std::move(L));
  }

  std::size_t scale(ScaleParams p, std::optional<std::size_t> from = {}) {
    LayerSpec L;
    L.kind = LayerKind::Scale;
    L.inputs = {from.value_or(last())};
    L.scale = std::move(p);
    return push(std::move(L));
  }

  std::size_t add(std::vector<std::size_t> inputs) {
    LayerSpec L;
    L.kind = LayerKind::Add;
    L.inputs = std::move(inputs);
    return push(std::move(L));
  }

  ModelGraph finish() {
    unary(LayerKind::Output);
    return std::move(m_);
  }

  const ModelGraph& graph() const { return m_; }

 private:
  std::size_t push(LayerSpec L) {
    L.index = m_.layers.size();
    m_.layers.push_back(std::move(L));
    return m_.layers.back().index;
  }
  ModelGraph m_;
};

// LeNet-5 for [1, 28, 28] inputs: 2 conv/pool stages and 3 fully connected layers.
// He-uniform initialisation, zero biases.
inline ModelGraph lenet(std::uint64_t seed, std::size_t classes = 10) {
  std::mt19937_64 rng(seed);
  auto he = [](std::size_t fan_in) { return static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in))); };
  GraphBuilder b({1, 28, 28}, classes);
  b.conv(6, detail::uniform_tensor({6, 1, 5, 5}, he(25), rng), Tensor({6}), Window{5, 5, 1, 1, 0, 0});
  b.unary(LayerKind::ReLU);
  b.pool(LayerKind::MaxPool2D, Window{2, 2, 2, 2, 0, 0});
  b.conv(16, detail::uniform_tensor({16, 6, 5, 5}, he(150), rng), Tensor({16}), Window{5, 5, 1, 1, 0, 0});
  b.unary(LayerKind::ReLU);
  b.pool(LayerKind::MaxPool2D, Window{2, 2, 2, 2, 0, 0});
  b.unary(LayerKind::Flatten);
  b.fc(120, detail::uniform_tensor({120, 256}, he(256), rng), Tensor({120}));
  b.unary(LayerKind::ReLU);
  b.fc(84, detail::uniform_tensor({84, 120}, he(120), rng), Tensor({84}));
  b.unary(LayerKind::ReLU);
  b.fc(classes, detail::uniform_tensor({classes, 84}, he(84), rng), Tensor({classes}));
  return b.finish();
}

struct RandomGraphConfig {
  std::size_t max_stages = 5;
  std::size_t max_units = 8;
  double zero_weight_probability = 0.1;
};

// Random small graph: up to max_stages operator stages drawn from every kind
// (Conv2D, pools, ReLU, Scale, residual Add), then Flatten, one or two
// FullyConnected layers and Output. `stage_hint` rotates the first stage kind
// so that a run of seeds covers every operator.
inline ModelGraph random_graph(std::uint64_t seed, const RandomGraphConfig& cfg = {}, std::size_t stage_hint = 0) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::bernoulli_distribution zero(cfg.zero_weight_probability);
  auto weights = [&](Shape s) {
    auto t = detail::uniform_tensor(std::move(s), 1.0f, rng);
    for (auto& v : t.data())
      if (zero(rng)) v = 0.0f;
    return t;
  };
  const std::size_t classes = pick(2, std::min<std::size_t>(cfg.max_units, 5));
  Dims d{pick(1, 3), pick(3, 6), pick(3, 6)};
  GraphBuilder b({d.c, d.h, d.w}, classes);
  const std::size_t stages = pick(1, cfg.max_stages);
  for (std::size_t s = 0; s < stages; ++s) {
    std::size_t kind = s == 0 ? stage_hint % 6 : pick(0, 5);
    switch (kind) {
      case 0: {  // Conv2D
        std::size_t k = pick(1, std::min<std::size_t>(3, std::min(d.h, d.w)));
        std::size_t pad = pick(0, k > 1 ? 1 : 0);
        std::size_t stride = pick(1, 2);
        std::size_t units = pick(1, cfg.max_units);
        b.conv(units, weights({units, d.c, k, k}), detail::uniform_tensor({units}, 0.5f, rng),
               Window{k, k, stride, stride, pad, pad});
        d = {units, (d.h + 2 * pad - k) / stride + 1, (d.w + 2 * pad - k) / stride + 1};
        break;
      }
      case 1:
      case 2: {  // pools
        if (d.h < 2 || d.w < 2) {
          b.unary(LayerKind::ReLU);
          break;
        }
        std::size_t stride = pick(1, 2);
        b.pool(kind == 1 ? LayerKind::MaxPool2D : LayerKind::AvgPool2D, Window{2, 2, stride, stride, 0, 0});
        d = {d.c, (d.h - 2) / stride + 1, (d.w - 2) / stride + 1};
        break;
      }
      case 3: b.unary(LayerKind::ReLU); break;
      case 4: {
        std::uniform_real_distribution<float> mu(-0.5f, 0.5f), sd(0.5f, 2.0f), ga(-1.5f, 1.5f);
        ScaleParams p{Tensor({d.c}), Tensor({d.c}), Tensor({d.c}), Tensor({d.c})};
        for (std::size_t c = 0; c < d.c; ++c) {
          p.mean[c] = mu(rng);
          p.std[c] = sd(rng);
          p.gamma[c] = ga(rng);
          p.beta[c] = mu(rng);
        }
        b.scale(std::move(p));
        break;
      }
      case 5: {  // residual: x + conv1x1(x)
        std::size_t x = b.last();
        b.conv(d.c, weights({d.c, d.c, 1, 1}), detail::uniform_tensor({d.c}, 0.5f, rng), Window{});
        b.add({x, b.last()});
        break;
      }
    }
  }
  b.unary(LayerKind::Flatten);
  std::size_t feat = d.size();
  if (pick(0, 1)) {
    std::size_t hidden = pick(2, cfg.max_units);
    b.fc(hidden, weights({hidden, feat}), detail::uniform_tensor({hidden}, 0.5f, rng));
    b.unary(LayerKind::ReLU);
    feat = hidden;
  }
  b.fc(classes, weights({classes, feat}), detail::uniform_tensor({classes}, 0.5f, rng));
  return b.finish();
}

}  // namespace nnslicer

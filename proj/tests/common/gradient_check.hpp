#pragma once

// Central finite-difference check of every weight and bias gradient.

#include <nnslicer/engine.hpp>
#include <nnslicer/zoo.hpp>

#include <cmath>
#include <random>
#include <sstream>

namespace gradient_check {

using namespace nnslicer;

struct Options {
  double step = 1e-4;
  double relative = 1e-4;
  // Below this magnitude the comparison is absolute: central differences carry
  // O(h^2) truncation error that no relative test can resolve there.
  double floor = 1e-5;
};

struct Outcome {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0;  // largest |analytic - numeric| / max(|analytic|, |numeric|, floor)
  std::string first_failure;
};

inline double loss_of(const Network<double>& net, const Tensor& x, std::size_t label) {
  const Tensor* p[] = {&x};
  std::size_t l[] = {label};
  return loss_and_gradients(net, std::span<const Tensor* const>(p), std::span<const std::size_t>(l), false).loss;
}

inline Tensor uniform_input(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline void check_model(const ModelGraph& m, const Tensor& x, std::size_t label, const Options& opt, Outcome& out,
                        const std::string& tag) {
  Network<double> net(m);
  const Tensor* p[] = {&x};
  std::size_t l[] = {label};
  auto g = loss_and_gradients(net, std::span<const Tensor* const>(p), std::span<const std::size_t>(l));
  for (std::size_t layer = 0; layer < m.layers.size(); ++layer) {
    for (auto [params, grads] :
         {std::pair{&net.weights(layer), &g.weights[layer]}, std::pair{&net.bias(layer), &g.bias[layer]}}) {
      for (std::size_t k = 0; k < params->size(); ++k) {
        double saved = (*params)[k];
        (*params)[k] = saved + opt.step;
        double up = loss_of(net, x, label);
        (*params)[k] = saved - opt.step;
        double down = loss_of(net, x, label);
        (*params)[k] = saved;
        double numeric = (up - down) / (2 * opt.step), analytic = (*grads)[k];
        double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
        out.worst = std::max(out.worst, err);
        ++out.checked;
        if (err > opt.relative) {
          if (!out.failed) {
            std::ostringstream os;
            os << tag << " layer " << layer << " param " << k << ": " << analytic << " vs " << numeric;
            out.first_failure = os.str();
          }
          ++out.failed;
        }
      }
    }
  }
}

// `instances` random graphs whose first stage is each operator kind in turn.
inline Outcome check_every_kind(std::size_t instances, const Options& opt = {}) {
  Outcome out;
  for (std::size_t kind = 0; kind < 6; ++kind) {
    for (std::uint64_t inst = 0; inst < instances; ++inst) {
      auto m = random_graph(1000 * kind + inst, {}, kind);
      auto x = uniform_input(m.input_shape, inst);
      std::ostringstream tag;
      tag << "kind " << kind << " instance " << inst;
      check_model(m, x, inst % m.class_count, opt, out, tag.str());
    }
  }
  return out;
}

}  // namespace gradient_check

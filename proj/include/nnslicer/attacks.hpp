#pragma once

// Untargeted L-infinity attacks on the cross-entropy loss: FGSM and PGD with a
// random start. Inputs are images with pixels in [0, 1].

#include <nnslicer/engine.hpp>

#include <random>

namespace nnslicer {

namespace detail {

inline std::vector<float> input_gradient(const Network<float>& net, const Tensor& x, std::size_t label) {
  const Tensor* batch[] = {&x};
  std::size_t labels[] = {label};
  auto g = loss_and_gradients(net, std::span<const Tensor* const>(batch), std::span<const std::size_t>(labels));
  for (float v : g.inputs[0])
    if (!std::isfinite(v)) throw NumericError("attack gradient is not finite");
  return std::move(g.inputs[0]);
}

inline float sign(float v) { return static_cast<float>((v > 0) - (v < 0)); }

// Projection onto the eps-ball around x0 intersected with [0, 1].
inline void project(Tensor& x, const Tensor& x0, double eps) {
  const float e = static_cast<float>(eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    float lo = std::max(0.0f, x0[i] - e), hi = std::min(1.0f, x0[i] + e);
    x[i] = std::clamp(x[i], std::min(lo, hi), std::max(lo, hi));
    while (std::fabs(static_cast<double>(x[i]) - x0[i]) > eps) x[i] = std::nextafter(x[i], x0[i]);
  }
}

inline void check_eps(double eps) {
  if (!(eps >= 0) || !std::isfinite(eps)) throw std::invalid_argument("attack epsilon must be finite and >= 0");
}

}  // namespace detail

inline Tensor fgsm(const Network<float>& net, const Tensor& x, std::size_t label, double eps) {
  detail::check_eps(eps);
  if (eps == 0) return x;
  auto g = detail::input_gradient(net, x, label);
  const float e = static_cast<float>(eps);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + e * detail::sign(g[i]);
  detail::project(out, x, eps);
  return out;
}

inline Tensor fgsm(const ModelGraph& m, const Tensor& x, std::size_t label, double eps) {
  return fgsm(Network<float>(m), x, label, eps);
}

struct PgdConfig {
  double eps = 8.0 / 256;
  double step = 2.0 / 256;
  std::size_t iterations = 10;
  std::uint64_t seed = 0;
};

inline Tensor pgd(const Network<float>& net, const Tensor& x, std::size_t label, const PgdConfig& cfg) {
  detail::check_eps(cfg.eps);
  if (!(cfg.step >= 0)) throw std::invalid_argument("PGD step must be >= 0");
  if (cfg.eps == 0) return x;
  const float e = static_cast<float>(cfg.eps), a = static_cast<float>(cfg.step);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<float> u(-e, e);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + u(rng);
  detail::project(out, x, cfg.eps);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto g = detail::input_gradient(net, out, label);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * detail::sign(g[i]);
    detail::project(out, x, cfg.eps);
  }
  return out;
}

inline Tensor pgd(const ModelGraph& m, const Tensor& x, std::size_t label, const PgdConfig& cfg) {
  return pgd(Network<float>(m), x, label, cfg);
}

inline double linf_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("shape mismatch");
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::fabs(static_cast<double>(a[i]) - b[i]));
  return d;
}

}  // namespace nnslicer

#pragma once

// Seeded generator of MNIST-format handwritten-style digits: [1, 28, 28]
// grayscale images in [0, 1], labels 0..9. Each class is a fixed stroke glyph;
// every sample draws its own control-point jitter, affine transform, stroke
// width, intensity and background noise.

#include <nnslicer/dataset.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace nnslicer::digits {

struct Point {
  double x, y;
};

using Stroke = std::vector<Point>;
using Glyph = std::vector<Stroke>;

struct DigitStyle {
  double jitter = 0.035;      // control-point noise, glyph units
  double max_rotation = 0.3;  // radians
  double min_scale = 0.75, max_scale = 1.05;
  double max_shear = 0.25;
  double max_shift = 0.1;     // glyph units
  double min_width = 1.1, max_width = 2.8;  // pixels
  double noise = 0.06;
};

namespace detail {

inline Stroke arc(Point c, double rx, double ry, double from_deg, double to_deg, int steps = 14) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    double a = (from_deg + (to_deg - from_deg) * i / steps) * std::numbers::pi / 180.0;
    s.push_back({c.x + rx * std::cos(a), c.y + ry * std::sin(a)});
  }
  return s;
}

inline Stroke join(Stroke a, const Stroke& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Unit-box glyphs, x to the right and y downwards.
inline const std::array<Glyph, 10>& glyphs() {
  static const std::array<Glyph, 10> g = [] {
    std::array<Glyph, 10> out;
    out[0] = {arc({0.5, 0.5}, 0.28, 0.42, 0, 360, 24)};
    out[1] = {{{0.36, 0.22}, {0.52, 0.08}, {0.52, 0.92}}};
    out[2] = {join(arc({0.5, 0.32}, 0.24, 0.22, 190, 380, 12), Stroke{{0.24, 0.9}, {0.8, 0.9}})};
    out[3] = {arc({0.47, 0.29}, 0.23, 0.2, -160, 90, 12), arc({0.47, 0.7}, 0.26, 0.22, -90, 160, 12)};
    out[4] = {{{0.66, 0.92}, {0.66, 0.08}, {0.2, 0.64}, {0.82, 0.64}}};
    out[5] = {join(Stroke{{0.76, 0.1}, {0.34, 0.1}, {0.3, 0.46}}, arc({0.5, 0.66}, 0.26, 0.24, -130, 150, 12))};
    out[6] = {join(Stroke{{0.72, 0.1}, {0.46, 0.24}, {0.3, 0.52}}, arc({0.51, 0.68}, 0.22, 0.21, 180, 540, 20))};
    out[7] = {{{0.2, 0.1}, {0.8, 0.1}, {0.42, 0.92}}, {{0.4, 0.52}, {0.7, 0.52}}};
    out[8] = {arc({0.5, 0.28}, 0.19, 0.18, 0, 360, 18), arc({0.5, 0.7}, 0.24, 0.22, 0, 360, 20)};
    out[9] = {arc({0.49, 0.32}, 0.22, 0.21, 0, 360, 20), {{0.71, 0.34}, {0.62, 0.92}}};
    return out;
  }();
  return g;
}

inline double segment_distance(Point p, Point a, Point b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len2, 0.0, 1.0) : 0.0;
  double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

// Image of digit `label` drawn with randomness from `rng`.
inline Tensor render(int label, std::mt19937_64& rng, const DigitStyle& style = {}) {
  if (label < 0 || label > 9) throw std::invalid_argument("digit label must be in 0..9");
  std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
  std::normal_distribution<double> jit(0.0, style.jitter);
  const double rot = style.max_rotation * u(rng);
  const double sx = style.min_scale + (style.max_scale - style.min_scale) * u01(rng);
  const double sy = style.min_scale + (style.max_scale - style.min_scale) * u01(rng);
  const double shear = style.max_shear * u(rng);
  const double tx = style.max_shift * u(rng), ty = style.max_shift * u(rng);
  const double width = style.min_width + (style.max_width - style.min_width) * u01(rng);
  const double peak = 0.75 + 0.25 * u01(rng);
  const double c = std::cos(rot), s = std::sin(rot);

  // Glyph box maps to a 20x20 area centred in the 28x28 frame.
  auto place = [&](Point p) {
    double x = (p.x - 0.5 + jit(rng)) * sx, y = (p.y - 0.5 + jit(rng)) * sy;
    x += shear * y;
    double rx = c * x - s * y + tx, ry = s * x + c * y + ty;
    return Point{14.0 + 20.0 * rx, 14.0 + 20.0 * ry};
  };
  std::vector<std::pair<Point, Point>> segs;
  for (const auto& stroke : detail::glyphs()[static_cast<std::size_t>(label)]) {
    std::vector<Point> pts;
    for (const auto& p : stroke) pts.push_back(place(p));
    for (std::size_t i = 1; i < pts.size(); ++i) segs.push_back({pts[i - 1], pts[i]});
  }

  std::normal_distribution<double> noise(0.0, style.noise);
  Tensor img({1, 28, 28});
  for (std::size_t r = 0; r < 28; ++r)
    for (std::size_t col = 0; col < 28; ++col) {
      Point p{static_cast<double>(col) + 0.5, static_cast<double>(r) + 0.5};
      double d = 1e9;
      for (const auto& [a, b] : segs) d = std::min(d, detail::segment_distance(p, a, b));
      double ink = std::clamp(width / 2 + 0.5 - d, 0.0, 1.0) * peak;
      double v = ink + (style.noise > 0 ? noise(rng) : 0.0);
      img[r * 28 + col] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return img;
}

// `count` samples with labels cycling 0..9 in a seeded shuffle. Sample i only
// depends on (seed, i).
inline Dataset generate(std::size_t count, std::uint64_t seed, const DigitStyle& style = {}) {
  Dataset d{{}, 10};
  d.samples.reserve(count);
  std::mt19937_64 order_rng(seed);
  std::vector<int> labels;
  for (std::size_t i = 0; i < count; ++i) {
    if (labels.empty()) {
      for (int k = 0; k < 10; ++k) labels.push_back(k);
      std::shuffle(labels.begin(), labels.end(), order_rng);
    }
    int label = labels.back();
    labels.pop_back();
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    std::mt19937_64 rng(seq);
    d.samples.push_back({render(label, rng, style), label});
  }
  return d;
}

}  // namespace nnslicer::digits

#pragma once

// Reference implementation of backward slicing used as a test oracle.
//
// Written independently of Slicer: neuron addressing, operator rules and the
// theta exclusion are all recomputed here with ordered maps and per-neuron edge
// lists. Only the forward trace and the table type are shared.

#include <nnslicer/engine.hpp>
#include <nnslicer/model_io.hpp>
#include <nnslicer/profiler.hpp>
#include <nnslicer/slicer.hpp>

#include <map>
#include <optional>
#include <vector>

namespace nnslicer::reference {

namespace detail {

struct Edge {
  NeuronId pred;
  std::optional<SynapseId> synapse;
  double w = 1;
  double x = 0;
  double dx = 0;
};

struct Activity {
  double value = 0;
  double delta = 0;
};

// Layer whose spatial layout a Flatten chain ultimately reindexes.
inline std::size_t unflattened(const ModelGraph& m, std::size_t layer) {
  while (m.layers[layer].kind == LayerKind::Flatten) layer = m.layers[layer].inputs[0];
  return layer;
}

}  // namespace detail

inline ContributionTable oracle_backward(const ModelGraph& m, const ActivationProfile& p, const Tensor& x,
                                         std::span<const NeuronId> outputs, double theta) {
  using detail::Activity;
  using detail::Edge;
  if (p.model_fingerprint != model_fingerprint(m)) throw FingerprintMismatch("profile does not match model");
  if (outputs.empty()) throw std::invalid_argument("no outputs");
  if (theta < 0) throw std::invalid_argument("negative theta");
  const float theta_f = static_cast<float>(theta);
  const double th = theta_f;

  auto dims = infer_dims(m);
  auto fwd = forward<float>(m, x, true);
  const auto& trace = *fwd.trace;
  auto all = enumerate_neurons(m);
  if (all.size() != p.means.size() || all.size() != trace.means.size())
    throw FingerprintMismatch("profile does not cover the model's neurons");
  std::map<NeuronId, Activity> act;
  for (std::size_t i = 0; i < all.size(); ++i)
    act[all[i]] = {trace.means[i], trace.means[i] - static_cast<double>(p.means[i])};

  std::map<NeuronId, std::int64_t> ncontrib;
  std::map<SynapseId, std::int64_t> scontrib;
  const auto out_layer = static_cast<std::uint32_t>(m.layers.size() - 1);
  std::vector<std::uint32_t> units;
  for (const auto& o : outputs) {
    if (o.layer != out_layer || o.unit >= m.class_count) throw std::invalid_argument("output not a logit neuron");
    units.push_back(o.unit);
    ncontrib[o] = 1;
  }
  std::sort(units.begin(), units.end());
  units.erase(std::unique(units.begin(), units.end()), units.end());

  for (std::uint32_t l = out_layer; l >= 1; --l) {
    const auto& L = m.layers[l];
    std::vector<NeuronId> centers;
    for (const auto& [id, c] : ncontrib)
      if (id.layer == l && c != 0) centers.push_back(id);

    for (const auto& n : centers) {
      const std::int64_t C = ncontrib[n];
      const Activity me = act.at(n);

      if (L.kind == LayerKind::Output || L.kind == LayerKind::Flatten) {
        if (me.delta != 0.0) ncontrib[NeuronId{static_cast<std::uint32_t>(L.inputs[0]), n.unit}] += C;
        continue;
      }

      std::vector<Edge> edges;
      auto edge_from = [&](std::uint32_t layer, std::uint32_t unit, double w, std::optional<SynapseId> s) {
        NeuronId pn{layer, unit};
        const Activity a = act.at(pn);
        edges.push_back({pn, s, w, a.value, a.delta});
      };
      if (L.kind == LayerKind::FullyConnected) {
        const auto P = static_cast<std::uint32_t>(L.inputs[0]);
        const auto& src = dims[detail::unflattened(m, P)];
        const std::size_t in = dims[P].size();
        for (std::size_t j = 0; j < in; ++j) {
          double w = (*L.weights)[n.unit * in + j];
          edge_from(P, static_cast<std::uint32_t>(j / (src.h * src.w)), w,
                    SynapseId{l, n.unit, static_cast<std::uint32_t>(j), 0, 0});
        }
      } else if (L.kind == LayerKind::Conv2D) {
        const auto P = static_cast<std::uint32_t>(L.inputs[0]);
        const std::size_t cin = dims[P].c, kh = L.window.kernel_h, kw = L.window.kernel_w;
        for (std::uint32_t ic = 0; ic < cin; ++ic)
          for (std::uint32_t r = 0; r < kh; ++r)
            for (std::uint32_t c = 0; c < kw; ++c) {
              double w = (*L.weights)[((n.unit * cin + ic) * kh + r) * kw + c];
              edge_from(P, ic, w, SynapseId{l, n.unit, ic, r, c});
            }
      } else if (L.kind == LayerKind::Add) {
        for (auto P : L.inputs) edge_from(static_cast<std::uint32_t>(P), n.unit, 1.0, std::nullopt);
      } else {
        edge_from(static_cast<std::uint32_t>(L.inputs[0]), n.unit, 1.0, std::nullopt);
      }

      // contrib_i = CONTRIB_n * dy * term_i
      const double cd = static_cast<double>(C) * me.delta;
      std::vector<double> local(edges.size()), term(edges.size());
      for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto& e = edges[i];
        switch (L.kind) {
          case LayerKind::FullyConnected:
          case LayerKind::Conv2D:
          case LayerKind::Add:
            term[i] = e.w * e.dx;
            local[i] = cd * term[i];
            break;
          case LayerKind::ReLU:
            term[i] = e.dx;
            local[i] = e.x > 0 ? cd * e.dx : 0.0;
            break;
          default:  // AvgPool2D, MaxPool2D (the channel's maxima all come from this edge), Scale
            term[i] = e.dx;
            local[i] = cd * e.dx;
            break;
        }
      }

      std::vector<bool> dropped(edges.size(), false);
      const bool thresholded = L.kind == LayerKind::FullyConnected || L.kind == LayerKind::Conv2D ||
                               L.kind == LayerKind::Add || L.kind == LayerKind::AvgPool2D;
      if (thresholded) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t i = 0; i < edges.size(); ++i) ranked.push_back({std::fabs(local[i]), i});
        std::sort(ranked.begin(), ranked.end());
        double denom = std::fabs(me.value);
        if (L.kind == LayerKind::AvgPool2D) denom *= static_cast<double>(edges.size());
        if (denom < 1e-12) denom = 1e-12;
        double excluded_sum = 0;
        for (const auto& [mag, i] : ranked) {
          excluded_sum += term[i];
          if (std::fabs(excluded_sum) / denom > th) break;
          dropped[i] = true;
        }
      }
      for (std::size_t i = 0; i < edges.size(); ++i) {
        if (dropped[i] || local[i] == 0.0) continue;
        const std::int64_t s = local[i] > 0 ? 1 : -1;
        ncontrib[edges[i].pred] += s;
        if (edges[i].synapse) scontrib[*edges[i].synapse] += s;
      }
    }
  }

  ContributionTable t;
  t.criterion = {model_fingerprint(m), units, theta_f, sample_hash(x), 1};
  for (const auto& [id, v] : ncontrib)
    if (v) t.neurons.emplace_back(id, v);
  for (const auto& [id, v] : scontrib)
    if (v) t.synapses.emplace_back(id, v);
  return t;
}

}  // namespace nnslicer::reference

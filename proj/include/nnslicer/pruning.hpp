#pragma once

// Targeted pruning. Within every weighted layer the synapses are ranked by a
// selection key and the first floor(r * |S_l|) are zeroed. A neuron whose
// synapses are all zero is pruned and its bias is zeroed too.

#include <nnslicer/engine.hpp>
#include <nnslicer/slicer.hpp>

#include <random>
#include <string_view>

namespace nnslicer {

enum class SelectionMode { Contribution, WeightMagnitude, Random };

inline std::string_view mode_name(SelectionMode m) {
  switch (m) {
    case SelectionMode::Contribution: return "contrib";
    case SelectionMode::WeightMagnitude: return "weight";
    case SelectionMode::Random: return "random";
  }
  return "?";
}

inline std::optional<SelectionMode> parse_mode(std::string_view s) {
  if (s == "contrib" || s == "contribution") return SelectionMode::Contribution;
  if (s == "weight") return SelectionMode::WeightMagnitude;
  if (s == "random") return SelectionMode::Random;
  return std::nullopt;
}

struct PruneConfig {
  std::vector<std::size_t> target_classes;
  double ratio = 0.5;
  float theta = 0;
  SelectionMode mode = SelectionMode::Contribution;
  std::uint64_t seed = 0;
};

inline void check_prune_config(const PruneConfig& cfg, const ModelGraph& m) {
  if (cfg.target_classes.empty()) throw std::invalid_argument("pruning needs at least one target class");
  for (auto c : cfg.target_classes)
    if (c >= m.class_count) throw std::invalid_argument("target class " + std::to_string(c) + " out of range");
  if (!(cfg.ratio >= 0 && cfg.ratio <= 1)) throw std::invalid_argument("prune ratio must lie in [0, 1]");
}

namespace detail {

// Per weighted layer: flat synapse indices (relative to the layer) ascending by key.
inline std::vector<std::vector<std::size_t>> layer_rankings(const ModelGraph& m, const ContributionTable* t,
                                                            SelectionMode mode, std::uint64_t seed) {
  ModelIndex idx(m);
  std::vector<std::vector<std::size_t>> out(m.layers.size());
  std::vector<double> key;
  if (mode == SelectionMode::Contribution) {
    if (!t) throw std::invalid_argument("contribution mode needs a contribution table");
    if (t->criterion.model_fingerprint != model_fingerprint(m))
      throw FingerprintMismatch("contribution table was computed for a different model");
    key.assign(idx.synapse_count(), 0.0);
    for (const auto& [id, c] : t->synapses) key[idx.flat(id)] = std::fabs(static_cast<double>(c));
  }
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const std::size_t n = idx.synapse_count(l);
    if (n == 0) continue;
    auto& order = out[l];
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t off = idx.synapse_offset(l);
    switch (mode) {
      case SelectionMode::Contribution:
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key[off + a] < key[off + b]; });
        break;
      case SelectionMode::WeightMagnitude: {
        const auto& w = *m.layers[l].weights;
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return std::fabs(w[a]) < std::fabs(w[b]); });
        break;
      }
      case SelectionMode::Random: std::shuffle(order.begin(), order.end(), rng); break;
    }
  }
  return out;
}

}  // namespace detail

// Flat (canonical) indices of the synapses pruned at cfg.ratio, ascending.
inline std::vector<std::size_t> pruned_synapses(const ModelGraph& m, const ContributionTable* t, const PruneConfig& cfg) {
  check_prune_config(cfg, m);
  ModelIndex idx(m);
  auto rank = detail::layer_rankings(m, t, cfg.mode, cfg.seed);
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const std::size_t n = rank[l].size();
    const auto k = static_cast<std::size_t>(std::floor(cfg.ratio * static_cast<double>(n)));
    for (std::size_t i = 0; i < k; ++i) out.push_back(idx.synapse_offset(l) + rank[l][i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Copy of `m` with the given synapses zeroed and the biases of neurons left
// without any nonzero synapse zeroed.
inline ModelGraph apply_pruning(const ModelGraph& m, std::span<const std::size_t> synapses) {
  ModelIndex idx(m);
  ModelGraph out = m;
  std::vector<std::uint8_t> cut(idx.synapse_count(), 0);
  for (auto s : synapses) {
    if (s >= cut.size()) throw std::out_of_range("synapse index out of range");
    cut[s] = 1;
  }
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& L = out.layers[l];
    if (!L.weights) continue;
    const std::size_t off = idx.synapse_offset(l), n = idx.synapse_count(l);
    const std::size_t per_unit = n / L.units;
    for (std::size_t u = 0; u < L.units; ++u) {
      bool all = true;
      for (std::size_t k = u * per_unit; k < (u + 1) * per_unit; ++k) all = all && cut[off + k];
      for (std::size_t k = u * per_unit; k < (u + 1) * per_unit; ++k)
        if (cut[off + k]) (*L.weights)[k] = 0.0f;
      if (all && L.bias) (*L.bias)[u] = 0.0f;
    }
  }
  return out;
}

inline ModelGraph prune(const ModelGraph& m, const ContributionTable* t, const PruneConfig& cfg) {
  if (cfg.ratio == 0) {
    check_prune_config(cfg, m);
    return m;
  }
  return apply_pruning(m, pruned_synapses(m, t, cfg));
}

// Neurons of weighted layers whose synapses are all zero.
inline std::vector<NeuronId> pruned_neurons(const ModelGraph& m) {
  std::vector<NeuronId> out;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    if (!L.weights) continue;
    const std::size_t per_unit = L.weights->size() / L.units;
    for (std::size_t u = 0; u < L.units; ++u) {
      bool all = true;
      for (std::size_t k = u * per_unit; k < (u + 1) * per_unit && all; ++k) all = (*L.weights)[k] == 0.0f;
      if (all) out.push_back({static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(u)});
    }
  }
  return out;
}

// Freezes the given synapses and the biases of neurons whose synapses are all frozen.
inline ParamMask freeze_mask(const ModelGraph& m, std::span<const std::size_t> frozen) {
  ModelIndex idx(m);
  ParamMask mask;
  mask.weights.resize(m.layers.size());
  mask.bias.resize(m.layers.size());
  std::vector<std::uint8_t> cut(idx.synapse_count(), 0);
  for (auto s : frozen) cut.at(s) = 1;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    if (!L.weights) continue;
    const std::size_t off = idx.synapse_offset(l), n = idx.synapse_count(l), per_unit = n / L.units;
    std::vector<std::uint8_t> w(n), b(L.units, 1);
    for (std::size_t k = 0; k < n; ++k) w[k] = !cut[off + k];
    for (std::size_t u = 0; u < L.units; ++u) {
      bool all = true;
      for (std::size_t k = u * per_unit; k < (u + 1) * per_unit; ++k) all = all && cut[off + k];
      b[u] = !all;
    }
    mask.weights[l] = std::move(w);
    mask.bias[l] = std::move(b);
  }
  return mask;
}

// Masked SGD on `d` (normally the target-class training data); pruned weights stay zero.
inline ModelGraph fine_tune(const ModelGraph& pruned, std::span<const std::size_t> pruned_set, const Dataset& d,
                            const TrainConfig& cfg) {
  auto mask = freeze_mask(pruned, pruned_set);
  return sgd_train(pruned, d, cfg, &mask);
}

// Contribution table for criterion (I^T, O^T): all samples of `d` whose label is a
// target class, sliced for the target-class logits.
inline ContributionTable target_contributions(const Slicer& slicer, const Dataset& d,
                                              std::span<const std::size_t> targets, double theta,
                                              WorkerPool* pool = nullptr) {
  auto subset = filter_classes(d, targets);
  if (subset.empty()) throw std::invalid_argument("no samples of the target classes");
  std::vector<const Tensor*> xs;
  for (const auto& s : subset.samples) xs.push_back(&s.input);
  auto outs = output_neurons(slicer.model(), targets);
  return slice_criterion(slicer, xs, outs, theta, pool);
}

}  // namespace nnslicer

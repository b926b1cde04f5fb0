#pragma once

// Selective protection: hide the synapses that matter most for the target
// classes and measure how well an attacker who knows everything else recovers
// them by retraining.

#include <nnslicer/pruning.hpp>

namespace nnslicer {

struct ProtectionSet {
  std::vector<std::size_t> hidden;  // flat synapse indices, ascending
  double fraction = 0;
  SelectionMode mode = SelectionMode::Contribution;
};

// Global top floor(fraction * |S|) synapses: by |CONTRIB| (ties by canonical
// order), by |w|, or a seeded random choice.
inline ProtectionSet select_protected(const ModelGraph& m, const ContributionTable* t, double fraction,
                                      SelectionMode mode = SelectionMode::Contribution, std::uint64_t seed = 0) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("protected fraction must lie in (0, 1]");
  ModelIndex idx(m);
  const std::size_t n = idx.synapse_count();
  std::vector<double> key(n, 0.0);
  if (mode == SelectionMode::Contribution) {
    if (!t) throw std::invalid_argument("contribution mode needs a contribution table");
    if (t->criterion.model_fingerprint != model_fingerprint(m))
      throw FingerprintMismatch("contribution table was computed for a different model");
    for (const auto& [id, c] : t->synapses) key[idx.flat(id)] = std::fabs(static_cast<double>(c));
  } else if (mode == SelectionMode::WeightMagnitude) {
    for (std::size_t l = 0; l < m.layers.size(); ++l)
      if (m.layers[l].weights)
        for (std::size_t k = 0; k < idx.synapse_count(l); ++k)
          key[idx.synapse_offset(l) + k] = std::fabs((*m.layers[l].weights)[k]);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (mode == SelectionMode::Random) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key[a] > key[b]; });
  }
  ProtectionSet p;
  p.fraction = fraction;
  p.mode = mode;
  p.hidden.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::floor(fraction * static_cast<double>(n))));
  std::sort(p.hidden.begin(), p.hidden.end());
  return p;
}

struct ExtractionConfig {
  TrainConfig train{0.05, 32, 5, 0};
  float init_bound = 0.05f;
  bool freeze_exposed = true;
  std::uint64_t seed = 0;
};

struct ExtractionResult {
  ModelGraph recovered;
  double target_accuracy = 0;
  double all_accuracy = 0;
};

// The attacker's starting point: hidden weights replaced by seeded uniform
// values in [-init_bound, init_bound].
inline ModelGraph conceal(const ModelGraph& m, const ProtectionSet& hidden, float init_bound, std::uint64_t seed) {
  ModelIndex idx(m);
  ModelGraph out = m;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-init_bound, init_bound);
  for (auto s : hidden.hidden) {
    if (s >= idx.synapse_count()) throw std::out_of_range("protected synapse out of range");
    auto id = idx.synapse_at(s);
    (*out.layers[id.layer].weights)[s - idx.synapse_offset(id.layer)] = u(rng);
  }
  return out;
}

// Retrains the concealed model on `attacker_data` and evaluates it on `eval`,
// both on the target classes and on all classes.
inline ExtractionResult simulate_extraction(const ModelGraph& m, const ProtectionSet& hidden,
                                            const Dataset& attacker_data, const Dataset& eval,
                                            std::span<const std::size_t> targets, const ExtractionConfig& cfg,
                                            WorkerPool* pool = nullptr) {
  ExtractionResult r;
  if (hidden.hidden.empty()) {
    r.recovered = m;
  } else {
    auto start = conceal(m, hidden, cfg.init_bound, cfg.seed);
    if (cfg.freeze_exposed) {
      ModelIndex idx(m);
      std::vector<std::uint8_t> is_hidden(idx.synapse_count(), 0);
      for (auto s : hidden.hidden) is_hidden[s] = 1;
      ParamMask mask;
      mask.weights.resize(m.layers.size());
      mask.bias.resize(m.layers.size());
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        if (!m.layers[l].weights) continue;
        std::vector<std::uint8_t> w(idx.synapse_count(l));
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = is_hidden[idx.synapse_offset(l) + k];
        mask.weights[l] = std::move(w);
        mask.bias[l] = std::vector<std::uint8_t>(m.layers[l].units, 0);
      }
      r.recovered = sgd_train(start, attacker_data, cfg.train, &mask);
    } else {
      r.recovered = sgd_train(start, attacker_data, cfg.train);
    }
  }
  r.target_accuracy = evaluate(r.recovered, eval, targets, pool);
  r.all_accuracy = evaluate(r.recovered, eval, {}, pool);
  return r;
}

}  // namespace nnslicer

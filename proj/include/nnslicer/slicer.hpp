#pragma once

// Dynamic slicing of a network for a criterion (samples, output neurons).
//
// A sample is traced forward and every neuron's relative activation is taken
// against the dataset profile. Contributions are then propagated backwards one
// layer at a time, in descending layer order: every neuron with a nonzero
// cumulative contribution acts as a central neuron, computes the local
// contribution of each incoming term with its operator rule, drops the smallest
// terms allowed by theta, and adds sign(local) to the predecessor neuron and the
// synapse. Flatten and Output are reindexing layers and hand their contribution
// through unchanged.
//
// NNSL file: "NNSL" | u8 version=1 | 32-byte model fingerprint
//            | u32 output_count | u32 output units... | 32-byte sample-set hash
//            | f32 theta | u64 sample_count
//            | records until EOF: u8 tag (0 neuron, 1 synapse)
//                                 neuron:  u32 layer, u32 unit
//                                 synapse: u32 layer, u32 out, u32 in, u32 k_row, u32 k_col
//                                 i64 contribution

#include <nnslicer/binary_io.hpp>
#include <nnslicer/engine.hpp>
#include <nnslicer/hash.hpp>
#include <nnslicer/model_io.hpp>
#include <nnslicer/parallel.hpp>
#include <nnslicer/profiler.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace nnslicer {

inline constexpr std::uint8_t kSliceFormatVersion = 1;
inline constexpr double kInfluenceEpsilon = 1e-12;

// Relative activation of every neuron for one sample.
struct RelActTrace {
  std::vector<double> value;  // traced mean
  std::vector<double> delta;  // traced mean minus profile mean
  std::vector<std::vector<std::uint32_t>> maxpool_argmax;
  std::size_t predicted = 0;
};

inline RelActTrace relative_activations(const ActivationTrace& trace, const ActivationProfile& p) {
  if (trace.means.size() != p.means.size())
    throw FingerprintMismatch("trace and profile cover different neuron sets");
  RelActTrace r;
  r.value = trace.means;
  r.delta.resize(trace.means.size());
  for (std::size_t i = 0; i < trace.means.size(); ++i) r.delta[i] = trace.means[i] - static_cast<double>(p.means[i]);
  r.maxpool_argmax = trace.maxpool_argmax;
  r.predicted = trace.predicted;
  return r;
}

enum class ContribRule { WeightedSum, Average, Maximum, Rectify, Scale };

// One incoming term of a central neuron: synapse weight (1 for weightless ops),
// predecessor activation and predecessor relative activation.
struct ContribInput {
  double w = 1;
  double x = 0;
  double dx = 0;
};

// Local contribution of every incoming term. For Maximum, `selected` names the
// input that produced the maximum; without it the input equal to y is used.
inline std::vector<double> local_contributions(ContribRule rule, std::int64_t center, double dy,
                                               std::span<const ContribInput> inputs,
                                               std::optional<std::size_t> selected = std::nullopt, double y = 0) {
  const double scale = static_cast<double>(center) * dy;
  std::vector<double> out(inputs.size(), 0.0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    switch (rule) {
      case ContribRule::WeightedSum: out[i] = scale * (in.w * in.dx); break;
      case ContribRule::Average:
      case ContribRule::Scale: out[i] = scale * in.dx; break;
      case ContribRule::Maximum: {
        bool hit = selected ? *selected == i : in.x == y;
        out[i] = hit ? scale * in.dx : 0.0;
        break;
      }
      case ContribRule::Rectify: out[i] = in.x > 0 ? scale * in.dx : 0.0; break;
    }
  }
  return out;
}

// Indices (ascending) of the local contributions that update CONTRIB.
//
// Contributions are ranked by ascending magnitude (stable by index). The longest
// prefix n_1..n_j whose every sub-prefix keeps the excluded influence within
// theta is dropped, together with all exact zeros. For a weighted sum the
// influence is |sum_{i<=j} w_i dx_i| / |y|; for an average it is
// |sum_{i<=j} dx_i| / (k |y|). The other rules are unaffected by theta.
inline std::vector<std::size_t> theta_filter(std::span<const double> local, ContribRule rule,
                                             std::span<const double> terms, double y, double theta) {
  if (!(theta >= 0)) throw std::invalid_argument("theta must be >= 0");
  std::vector<std::size_t> order(local.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t excluded = 0;
  if (rule == ContribRule::WeightedSum || rule == ContribRule::Average) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(local[a]) < std::abs(local[b]); });
    double denom = std::abs(y) * (rule == ContribRule::Average ? static_cast<double>(local.size()) : 1.0);
    denom = std::max(denom, kInfluenceEpsilon);
    double prefix = 0;
    for (; excluded < order.size(); ++excluded) {
      prefix += terms[order[excluded]];
      if (std::abs(prefix) / denom > theta) break;
    }
  }
  std::vector<std::size_t> kept;
  for (std::size_t k = excluded; k < order.size(); ++k)
    if (local[order[k]] != 0.0) kept.push_back(order[k]);
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline int sign_of(double v) { return (v > 0) - (v < 0); }

struct CriterionInfo {
  Digest model_fingerprint{};
  std::vector<std::uint32_t> outputs;  // output-layer units, ascending
  float theta = 0;
  Digest sample_set_hash{};
  std::uint64_t sample_count = 0;
  friend bool operator==(const CriterionInfo&, const CriterionInfo&) = default;
};

// Sparse cumulative contributions; absent entries are zero. Entries are kept in
// canonical (enumerate_*) order.
struct ContributionTable {
  CriterionInfo criterion;
  std::vector<std::pair<NeuronId, std::int64_t>> neurons;
  std::vector<std::pair<SynapseId, std::int64_t>> synapses;

  std::int64_t neuron(NeuronId id) const {
    auto it = std::lower_bound(neurons.begin(), neurons.end(), id, [](const auto& e, NeuronId k) { return e.first < k; });
    return it != neurons.end() && it->first == id ? it->second : 0;
  }
  std::int64_t synapse(SynapseId id) const {
    auto it =
        std::lower_bound(synapses.begin(), synapses.end(), id, [](const auto& e, SynapseId k) { return e.first < k; });
    return it != synapses.end() && it->first == id ? it->second : 0;
  }
  bool empty() const noexcept { return neurons.empty() && synapses.empty(); }

  friend bool operator==(const ContributionTable&, const ContributionTable&) = default;
};

struct Slice {
  CriterionInfo criterion;
  std::vector<std::pair<NeuronId, std::int64_t>> neurons;
  std::vector<std::pair<SynapseId, std::int64_t>> synapses;
  std::size_t neuron_count() const noexcept { return neurons.size(); }
  std::size_t synapse_count() const noexcept { return synapses.size(); }
};

inline Slice extract_slice(const ContributionTable& t) {
  Slice s{t.criterion, {}, {}};
  for (const auto& e : t.neurons)
    if (e.second) s.neurons.push_back(e);
  for (const auto& e : t.synapses)
    if (e.second) s.synapses.push_back(e);
  return s;
}

// Validates criterion outputs and returns their units, sorted and unique.
inline std::vector<std::uint32_t> criterion_units(const ModelGraph& m, std::span<const NeuronId> outputs) {
  if (outputs.empty()) throw std::invalid_argument("slicing criterion needs at least one output neuron");
  std::vector<std::uint32_t> units;
  for (const auto& o : outputs) {
    if (o.layer != output_layer(m) || o.unit >= m.class_count)
      throw std::invalid_argument("criterion output (" + std::to_string(o.layer) + "," + std::to_string(o.unit) +
                                  ") is not a logit neuron");
    units.push_back(o.unit);
  }
  std::sort(units.begin(), units.end());
  units.erase(std::unique(units.begin(), units.end()), units.end());
  return units;
}

inline std::vector<NeuronId> output_neurons(const ModelGraph& m, std::span<const std::size_t> classes) {
  std::vector<NeuronId> out;
  for (auto c : classes)
    out.push_back({static_cast<std::uint32_t>(output_layer(m)), static_cast<std::uint32_t>(c)});
  return out;
}

// Prepared slicing context for one (model, profile) pair. Thread-safe for
// concurrent slice() calls.
class Slicer {
 public:
  Slicer(const ModelGraph& m, const ActivationProfile& p)
      : model_(&m), net_(m), fingerprint_(model_fingerprint(m)), profile_(&p) {
    if (p.model_fingerprint != fingerprint_) throw FingerprintMismatch("profile was computed for a different model");
    if (p.means.size() != net_.index().neuron_count()) throw FingerprintMismatch("profile neuron count mismatch");
  }

  const ModelGraph& model() const noexcept { return *model_; }
  const ModelIndex& index() const noexcept { return net_.index(); }
  const Network<float>& network() const noexcept { return net_; }
  const Digest& fingerprint() const noexcept { return fingerprint_; }

  RelActTrace relative(const Tensor& x) const { return relative_activations(trace_sample(net_, x), *profile_); }

  ContributionTable slice(const Tensor& x, std::span<const NeuronId> outputs, double theta) const {
    return slice(relative(x), sample_hash(x), outputs, theta);
  }

  ContributionTable slice(const RelActTrace& r, const Digest& sample, std::span<const NeuronId> outputs,
                          double theta) const {
    auto units = criterion_units(*model_, outputs);
    if (!(theta >= 0)) throw std::invalid_argument("theta must be >= 0");
    const float theta_f = static_cast<float>(theta);
    const auto& idx = net_.index();
    std::vector<std::int64_t> nc(idx.neuron_count(), 0);
    std::vector<std::int64_t> sc(idx.synapse_count(), 0);
    const std::size_t out_l = output_layer(*model_);
    for (auto u : units) nc[idx.neuron_offset(out_l) + u] = 1;
    propagate(r, nc, sc, static_cast<double>(theta_f));

    ContributionTable t;
    t.criterion = {fingerprint_, units, theta_f, sample, 1};
    for (std::size_t i = 0; i < nc.size(); ++i)
      if (nc[i]) t.neurons.emplace_back(idx.neuron_at(i), nc[i]);
    for (std::size_t i = 0; i < sc.size(); ++i)
      if (sc[i]) t.synapses.emplace_back(idx.synapse_at(i), sc[i]);
    return t;
  }

 private:
  void propagate(const RelActTrace& r, std::vector<std::int64_t>& nc, std::vector<std::int64_t>& sc,
                 double theta) const {
    const auto& m = *model_;
    const auto& idx = net_.index();
    std::vector<ContribInput> inputs;
    std::vector<std::size_t> pred;      // predecessor neuron (flat) per term
    std::vector<std::int64_t> syn;      // synapse (flat) per term, -1 for none
    std::vector<double> terms;
    for (std::size_t li = m.layers.size(); li-- > 1;) {
      const auto& L = m.layers[li];
      const std::size_t off = idx.neuron_offset(li);
      for (std::size_t u = 0; u < idx.neuron_count(li); ++u) {
        const std::int64_t center = nc[off + u];
        if (center == 0) continue;
        const double dy = r.delta[off + u];
        const double y = r.value[off + u];
        if (L.kind == LayerKind::Flatten || L.kind == LayerKind::Output) {
          if (dy != 0.0) nc[idx.neuron_offset(L.inputs[0]) + u] += center;
          continue;
        }
        inputs.clear();
        pred.clear();
        syn.clear();
        ContribRule rule = ContribRule::WeightedSum;
        std::optional<std::size_t> selected;
        switch (L.kind) {
          case LayerKind::FullyConnected: {
            const std::size_t p = L.inputs[0];
            const std::size_t g = idx.group_size(p), poff = idx.neuron_offset(p);
            const auto& w = net_.weights(li);
            const std::size_t n = idx.dims(p).size();
            for (std::size_t j = 0; j < n; ++j) {
              std::size_t pn = poff + j / g;
              inputs.push_back({static_cast<double>(w[u * n + j]), r.value[pn], r.delta[pn]});
              pred.push_back(pn);
              syn.push_back(static_cast<std::int64_t>(idx.synapse_offset(li) + u * n + j));
            }
            break;
          }
          case LayerKind::Conv2D: {
            const std::size_t p = L.inputs[0];
            const std::size_t poff = idx.neuron_offset(p);
            const std::size_t cin = idx.dims(p).c, k = L.window.kernel_h * L.window.kernel_w;
            const auto& w = net_.weights(li);
            for (std::size_t ic = 0; ic < cin; ++ic)
              for (std::size_t kk = 0; kk < k; ++kk) {
                std::size_t s = (u * cin + ic) * k + kk;
                inputs.push_back({static_cast<double>(w[s]), r.value[poff + ic], r.delta[poff + ic]});
                pred.push_back(poff + ic);
                syn.push_back(static_cast<std::int64_t>(idx.synapse_offset(li) + s));
              }
            break;
          }
          case LayerKind::Add:
            for (auto p : L.inputs) {
              std::size_t pn = idx.neuron_offset(p) + u;
              inputs.push_back({1.0, r.value[pn], r.delta[pn]});
              pred.push_back(pn);
              syn.push_back(-1);
            }
            break;
          default: {
            std::size_t pn = idx.neuron_offset(L.inputs[0]) + u;
            inputs.push_back({1.0, r.value[pn], r.delta[pn]});
            pred.push_back(pn);
            syn.push_back(-1);
            switch (L.kind) {
              case LayerKind::AvgPool2D: rule = ContribRule::Average; break;
              case LayerKind::MaxPool2D:
                // Every maximum of channel u is drawn from predecessor channel u.
                rule = ContribRule::Maximum;
                selected = 0;
                break;
              case LayerKind::ReLU: rule = ContribRule::Rectify; break;
              default: rule = ContribRule::Scale; break;
            }
          }
        }
        auto local = local_contributions(rule, center, dy, inputs, selected, y);
        terms.resize(inputs.size());
        for (std::size_t i = 0; i < inputs.size(); ++i)
          terms[i] = rule == ContribRule::WeightedSum ? inputs[i].w * inputs[i].dx : inputs[i].dx;
        for (auto i : theta_filter(local, rule, terms, y, theta)) {
          int s = sign_of(local[i]);
          nc[pred[i]] += s;
          if (syn[i] >= 0) sc[static_cast<std::size_t>(syn[i])] += s;
        }
      }
    }
  }

  const ModelGraph* model_;
  Network<float> net_;
  Digest fingerprint_;
  const ActivationProfile* profile_;
};

inline ContributionTable backward_slice(const ModelGraph& m, const ActivationProfile& p, const Tensor& x,
                                        std::span<const NeuronId> outputs, double theta) {
  return Slicer(m, p).slice(x, outputs, theta);
}

// Element-wise integer sum of tables that share model, outputs and theta.
inline ContributionTable aggregate(std::span<const ContributionTable> tables) {
  if (tables.empty()) throw std::invalid_argument("nothing to aggregate");
  ContributionTable out;
  out.criterion = tables[0].criterion;
  out.criterion.sample_count = 0;
  out.criterion.sample_set_hash = {};
  for (const auto& t : tables) {
    const auto& c = t.criterion;
    if (c.model_fingerprint != out.criterion.model_fingerprint || c.outputs != out.criterion.outputs ||
        std::bit_cast<std::uint32_t>(c.theta) != std::bit_cast<std::uint32_t>(out.criterion.theta))
      throw FingerprintMismatch("contribution tables were computed for different criteria");
    out.criterion.sample_count += c.sample_count;
    out.criterion.sample_set_hash = digest_sum(out.criterion.sample_set_hash, c.sample_set_hash);
  }
  auto merge = [](auto& dst, const auto& src) {
    std::remove_cvref_t<decltype(dst)> merged;
    merged.reserve(dst.size() + src.size());
    std::size_t i = 0, j = 0;
    while (i < dst.size() || j < src.size()) {
      if (j == src.size() || (i < dst.size() && dst[i].first < src[j].first)) merged.push_back(dst[i++]);
      else if (i == dst.size() || src[j].first < dst[i].first) merged.push_back(src[j++]);
      else {
        auto v = dst[i].second + src[j].second;
        if (v) merged.emplace_back(dst[i].first, v);
        ++i;
        ++j;
      }
    }
    dst = std::move(merged);
  };
  for (const auto& t : tables) {
    merge(out.neurons, t.neurons);
    merge(out.synapses, t.synapses);
  }
  return out;
}

// Slices every sample with its own output set, one table per sample.
template <class OutputsFor>
std::vector<ContributionTable> slice_samples(const Slicer& slicer, std::span<const Tensor* const> xs,
                                             OutputsFor&& outputs_for, double theta, WorkerPool* pool = nullptr) {
  std::vector<ContributionTable> tables(xs.size());
  auto one = [&](std::size_t i) {
    auto rel = slicer.relative(*xs[i]);
    std::vector<NeuronId> outs = outputs_for(i, rel);
    tables[i] = slicer.slice(rel, sample_hash(*xs[i]), outs, theta);
  };
  if (pool) pool->parallel_for(xs.size(), one);
  else
    for (std::size_t i = 0; i < xs.size(); ++i) one(i);
  return tables;
}

inline constexpr std::size_t kSliceShard = 16;

// Criterion (samples, outputs): per-sample tables summed. Samples are processed
// in fixed shards, each shard reduced in order, shards merged in order.
inline ContributionTable slice_criterion(const Slicer& slicer, std::span<const Tensor* const> xs,
                                         std::span<const NeuronId> outputs, double theta, WorkerPool* pool = nullptr) {
  if (xs.empty()) throw std::invalid_argument("slicing criterion needs at least one sample");
  const std::size_t shards = shard_count(xs.size(), kSliceShard);
  std::vector<ContributionTable> partial(shards);
  auto run = [&](std::size_t s) {
    std::vector<ContributionTable> local;
    for (std::size_t i = s * kSliceShard; i < std::min(xs.size(), (s + 1) * kSliceShard); ++i)
      local.push_back(slicer.slice(*xs[i], outputs, theta));
    partial[s] = aggregate(local);
  };
  if (pool) pool->parallel_for(shards, run);
  else
    for (std::size_t s = 0; s < shards; ++s) run(s);
  return aggregate(partial);
}

inline std::vector<std::uint8_t> serialize_slice(const ContributionTable& t) {
  ByteWriter w;
  w.bytes("NNSL");
  w.put<std::uint8_t>(kSliceFormatVersion);
  w.bytes(t.criterion.model_fingerprint);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.criterion.outputs.size()));
  for (auto u : t.criterion.outputs) w.put<std::uint32_t>(u);
  w.bytes(t.criterion.sample_set_hash);
  w.put<float>(t.criterion.theta);
  w.put<std::uint64_t>(t.criterion.sample_count);
  for (const auto& [id, v] : t.neurons) {
    w.put<std::uint8_t>(0);
    w.put(id.layer);
    w.put(id.unit);
    w.put<std::int64_t>(v);
  }
  for (const auto& [id, v] : t.synapses) {
    w.put<std::uint8_t>(1);
    w.put(id.layer);
    w.put(id.out_unit);
    w.put(id.in_unit);
    w.put(id.k_row);
    w.put(id.k_col);
    w.put<std::int64_t>(v);
  }
  return std::move(w).take();
}

inline ContributionTable deserialize_slice(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "NNSL");
  r.expect_magic("NNSL");
  if (auto v = r.get<std::uint8_t>(); v != kSliceFormatVersion)
    throw FormatError("NNSL: unsupported version " + std::to_string(v));
  ContributionTable t;
  auto fp = r.bytes(32);
  std::copy(fp.begin(), fp.end(), t.criterion.model_fingerprint.begin());
  auto n = r.get<std::uint32_t>();
  if (n > r.remaining() / 4) throw FormatError("NNSL: truncated output list");
  for (std::uint32_t i = 0; i < n; ++i) t.criterion.outputs.push_back(r.get<std::uint32_t>());
  auto sh = r.bytes(32);
  std::copy(sh.begin(), sh.end(), t.criterion.sample_set_hash.begin());
  t.criterion.theta = r.get<float>();
  t.criterion.sample_count = r.get<std::uint64_t>();
  while (!r.at_end()) {
    auto tag = r.get<std::uint8_t>();
    if (tag == 0) {
      NeuronId id{r.get<std::uint32_t>(), r.get<std::uint32_t>()};
      auto v = r.get<std::int64_t>();
      if (!t.neurons.empty() && !(t.neurons.back().first < id)) throw FormatError("NNSL: neuron records out of order");
      t.neurons.emplace_back(id, v);
    } else if (tag == 1) {
      SynapseId id;
      id.layer = r.get<std::uint32_t>();
      id.out_unit = r.get<std::uint32_t>();
      id.in_unit = r.get<std::uint32_t>();
      id.k_row = r.get<std::uint32_t>();
      id.k_col = r.get<std::uint32_t>();
      auto v = r.get<std::int64_t>();
      if (!t.synapses.empty() && !(t.synapses.back().first < id))
        throw FormatError("NNSL: synapse records out of order");
      t.synapses.emplace_back(id, v);
    } else {
      throw FormatError("NNSL: unknown record tag " + std::to_string(tag));
    }
  }
  return t;
}

inline void save_slice(const ContributionTable& t, const std::filesystem::path& path) {
  write_file(path, serialize_slice(t));
}

inline ContributionTable load_slice(const std::filesystem::path& path) { return deserialize_slice(read_file(path)); }

inline ContributionTable load_slice(const std::filesystem::path& path, const ModelGraph& m) {
  auto t = load_slice(path);
  if (t.criterion.model_fingerprint != model_fingerprint(m))
    throw FingerprintMismatch("slice was computed for a different model");
  return t;
}

}  // namespace nnslicer

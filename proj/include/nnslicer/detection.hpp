#pragma once

// Adversarial-input detection from slice shapes. Every normal training sample
// is sliced for its predicted class; a decision tree learns to predict that
// class from the slice vector. A sample is flagged when the tree disagrees with
// the model.
//
// NNSD detector file (little-endian):
//   "NNSD" | u8 version=1 | u8[32] model fingerprint | f32 theta
//   | u64 training sample count | u64 vector length | u64 node count
//   | nodes in pre-order: u64 feature (UINT64_MAX = leaf) | f32 threshold | i32 label (-1 = internal)

#include <nnslicer/cart.hpp>
#include <nnslicer/slicer.hpp>

#include <limits>

namespace nnslicer {

inline constexpr std::uint8_t kDetectorFormatVersion = 1;

// Dense per-synapse CONTRIB in canonical synapse order.
inline std::vector<std::int64_t> slice_vector(const ContributionTable& t, const ModelGraph& m) {
  if (t.criterion.model_fingerprint != model_fingerprint(m))
    throw FingerprintMismatch("slice was computed for a different model");
  ModelIndex idx(m);
  std::vector<std::int64_t> v(idx.synapse_count(), 0);
  for (const auto& [id, c] : t.synapses) {
    if (!idx.contains(id)) throw std::invalid_argument("slice references a synapse outside the model");
    v[idx.flat(id)] = c;
  }
  return v;
}

namespace detail {

// Per-sample CONTRIB of a synapse is -1, 0 or +1, so int8 holds it losslessly.
inline std::int8_t narrow_contrib(std::int64_t v) {
  if (v < std::numeric_limits<std::int8_t>::min() || v > std::numeric_limits<std::int8_t>::max())
    throw std::out_of_range("per-sample contribution does not fit the detector feature type");
  return static_cast<std::int8_t>(v);
}

}  // namespace detail

struct Detector {
  DecisionTree tree;
  Digest model_fingerprint{};
  float theta = 0;
  std::uint64_t sample_count = 0;
  std::uint64_t vector_length = 0;
  friend bool operator==(const Detector&, const Detector&) = default;
};

// Slice tables of `xs`, each sliced for the model's own prediction.
inline std::vector<ContributionTable> predicted_class_slices(const Slicer& slicer, std::span<const Tensor* const> xs,
                                                            double theta, WorkerPool* pool = nullptr) {
  const auto out_l = static_cast<std::uint32_t>(output_layer(slicer.model()));
  return slice_samples(
      slicer, xs,
      [&](std::size_t, const RelActTrace& rel) {
        return std::vector<NeuronId>{{out_l, static_cast<std::uint32_t>(rel.predicted)}};
      },
      theta, pool);
}

struct DetectorTraining {
  Detector detector;
  double train_agreement = 0;  // fraction of training samples where F(M_x) == M(x)
};

inline DetectorTraining train_detector(const Slicer& slicer, std::span<const Tensor> samples, double theta,
                                       const CartConfig& cart = {}, WorkerPool* pool = nullptr,
                                       std::span<const std::uint8_t> usable = {}) {
  if (samples.empty()) throw std::invalid_argument("detector training needs at least one sample");
  const auto& idx = slicer.index();
  const std::size_t n = samples.size(), len = idx.synapse_count();
  FeatureMatrix<std::int8_t> X(n, len);
  std::vector<int> labels(n);
  const std::size_t shards = shard_count(n, kSliceShard);
  auto run = [&](std::size_t s) {
    const auto out_l = static_cast<std::uint32_t>(output_layer(slicer.model()));
    for (std::size_t i = s * kSliceShard; i < std::min(n, (s + 1) * kSliceShard); ++i) {
      auto rel = slicer.relative(samples[i]);
      NeuronId o{out_l, static_cast<std::uint32_t>(rel.predicted)};
      auto t = slicer.slice(rel, sample_hash(samples[i]), std::span<const NeuronId>(&o, 1), theta);
      labels[i] = static_cast<int>(rel.predicted);
      for (const auto& [id, c] : t.synapses) X.at(i, idx.flat(id)) = detail::narrow_contrib(c);
    }
  };
  if (pool) pool->parallel_for(shards, run);
  else
    for (std::size_t s = 0; s < shards; ++s) run(s);

  DetectorTraining out;
  out.detector.tree = cart_fit(X, labels, cart, usable);
  out.detector.model_fingerprint = slicer.fingerprint();
  out.detector.theta = static_cast<float>(theta);
  out.detector.sample_count = n;
  out.detector.vector_length = len;
  std::size_t agree = 0;
  std::vector<std::int8_t> row(len);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < len; ++f) row[f] = X.at(i, f);
    agree += out.detector.tree.predict(std::span<const std::int8_t>(row)) == labels[i];
  }
  out.train_agreement = static_cast<double>(agree) / static_cast<double>(n);
  return out;
}

struct Verdict {
  bool adversarial = false;
  std::size_t model_label = 0;  // M(x)
  int slice_label = 0;          // F(M_x)
};

inline void check_detector(const Detector& det, const Slicer& slicer) {
  if (det.model_fingerprint != slicer.fingerprint()) throw FingerprintMismatch("detector was trained for a different model");
  if (det.vector_length != slicer.index().synapse_count())
    throw FingerprintMismatch("detector vector length does not match the model");
}

// Verdict from an already computed slice for the model's prediction.
inline Verdict verdict_from_slice(const Detector& det, const ContributionTable& t, const ModelGraph& m,
                                  std::size_t model_label) {
  auto v = slice_vector(t, m);
  Verdict out;
  out.model_label = model_label;
  out.slice_label = det.tree.predict(std::span<const std::int64_t>(v));
  out.adversarial = out.slice_label != static_cast<int>(model_label);
  return out;
}

// Slices with the detector's own theta.
inline std::vector<Verdict> detect(const Detector& det, const Slicer& slicer, std::span<const Tensor* const> xs,
                                   WorkerPool* pool = nullptr) {
  check_detector(det, slicer);
  const auto& idx = slicer.index();
  std::vector<Verdict> out(xs.size());
  auto one = [&](std::size_t i) {
    auto rel = slicer.relative(*xs[i]);
    NeuronId o{static_cast<std::uint32_t>(output_layer(slicer.model())), static_cast<std::uint32_t>(rel.predicted)};
    auto t = slicer.slice(rel, sample_hash(*xs[i]), std::span<const NeuronId>(&o, 1), det.theta);
    std::vector<std::int8_t> v(idx.synapse_count(), 0);
    for (const auto& [id, c] : t.synapses) v[idx.flat(id)] = detail::narrow_contrib(c);
    out[i].model_label = rel.predicted;
    out[i].slice_label = det.tree.predict(std::span<const std::int8_t>(v));
    out[i].adversarial = out[i].slice_label != static_cast<int>(rel.predicted);
  };
  if (pool) pool->parallel_for(xs.size(), one);
  else
    for (std::size_t i = 0; i < xs.size(); ++i) one(i);
  return out;
}

inline Verdict detect(const Detector& det, const Slicer& slicer, const Tensor& x) {
  const Tensor* p[] = {&x};
  return detect(det, slicer, std::span<const Tensor* const>(p))[0];
}

struct DetectionScore {
  std::size_t true_positive = 0, false_positive = 0, false_negative = 0, true_negative = 0;
  double precision() const {
    auto d = true_positive + false_positive;
    return d ? static_cast<double>(true_positive) / static_cast<double>(d) : 0.0;
  }
  double recall() const {
    auto d = true_positive + false_negative;
    return d ? static_cast<double>(true_positive) / static_cast<double>(d) : 0.0;
  }
  double f1() const {
    double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

inline DetectionScore score_detection(std::span<const Verdict> adversarial, std::span<const Verdict> normal) {
  DetectionScore s;
  for (const auto& v : adversarial) (v.adversarial ? s.true_positive : s.false_negative)++;
  for (const auto& v : normal) (v.adversarial ? s.false_positive : s.true_negative)++;
  return s;
}

inline std::vector<std::uint8_t> serialize_detector(const Detector& d) {
  ByteWriter w;
  w.bytes("NNSD");
  w.put<std::uint8_t>(kDetectorFormatVersion);
  w.bytes(d.model_fingerprint);
  w.put<float>(d.theta);
  w.put<std::uint64_t>(d.sample_count);
  w.put<std::uint64_t>(d.vector_length);
  w.put<std::uint64_t>(d.tree.size());
  for (const auto& n : d.tree.nodes()) {
    w.put<std::uint64_t>(n.feature);
    w.put<float>(n.threshold);
    w.put<std::int32_t>(n.label);
  }
  return std::move(w).take();
}

inline Detector deserialize_detector(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "NNSD");
  r.expect_magic("NNSD");
  if (auto v = r.get<std::uint8_t>(); v != kDetectorFormatVersion)
    throw FormatError("NNSD: unsupported version " + std::to_string(v));
  Detector d;
  auto fp = r.bytes(32);
  std::copy(fp.begin(), fp.end(), d.model_fingerprint.begin());
  d.theta = r.get<float>();
  d.sample_count = r.get<std::uint64_t>();
  d.vector_length = r.get<std::uint64_t>();
  auto count = r.get<std::uint64_t>();
  if (count == 0 || count > r.remaining() / 16) throw FormatError("NNSD: node count does not match the file size");
  std::vector<TreeNode> nodes(count);
  for (auto& n : nodes) {
    n.feature = r.get<std::uint64_t>();
    n.threshold = r.get<float>();
    n.label = r.get<std::int32_t>();
  }
  if (!r.at_end()) throw FormatError("NNSD: trailing bytes");
  try {
    d.tree = DecisionTree(std::move(nodes), d.vector_length);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("NNSD: ") + e.what());
  }
  return d;
}

inline void save_detector(const Detector& d, const std::filesystem::path& path) {
  write_file(path, serialize_detector(d));
}

inline Detector load_detector(const std::filesystem::path& path) { return deserialize_detector(read_file(path)); }

}  // namespace nnslicer

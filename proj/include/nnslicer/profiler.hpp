#pragma once

// Dataset-wide mean activation of every neuron, the baseline that relative
// activations are measured against.
//
// NNSP file: "NNSP" | u8 version=1 | 32-byte model fingerprint | 32-byte dataset hash
//            | u64 sample_count | f32 mean per neuron in enumerate_neurons order

#include <nnslicer/binary_io.hpp>
#include <nnslicer/dataset.hpp>
#include <nnslicer/engine.hpp>
#include <nnslicer/hash.hpp>
#include <nnslicer/model_io.hpp>

#include <filesystem>
#include <vector>

namespace nnslicer {

inline constexpr std::uint8_t kProfileFormatVersion = 1;

class FingerprintMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ActivationProfile {
  std::vector<float> means;
  std::uint64_t sample_count = 0;
  Digest model_fingerprint{};
  Digest dataset_hash{};
  friend bool operator==(const ActivationProfile&, const ActivationProfile&) = default;
};

// Traces one sample through a prepared float network.
inline ActivationTrace trace_sample(const Network<float>& net, const Tensor& x) {
  typename Network<float>::State st;
  net.forward(x.data(), st);
  return make_trace(net, st);
}

inline constexpr std::size_t kProfileShard = 64;

inline ActivationProfile profile(const ModelGraph& m, const Dataset& d, WorkerPool* pool = nullptr) {
  if (d.empty()) throw std::invalid_argument("cannot profile an empty dataset");
  Network<float> net(m);
  const std::size_t neurons = net.index().neuron_count();
  const std::size_t shards = shard_count(d.size(), kProfileShard);
  std::vector<std::vector<double>> partial(shards);
  auto run = [&](std::size_t s) {
    std::vector<double> sum(neurons, 0.0);
    typename Network<float>::State st;
    for (std::size_t i = s * kProfileShard; i < std::min(d.size(), (s + 1) * kProfileShard); ++i) {
      net.forward(d.samples[i].input.data(), st);
      auto tr = make_trace(net, st);
      for (std::size_t n = 0; n < neurons; ++n) sum[n] += tr.means[n];
    }
    partial[s] = std::move(sum);
  };
  if (pool) pool->parallel_for(shards, run);
  else
    for (std::size_t s = 0; s < shards; ++s) run(s);

  std::vector<double> total(neurons, 0.0);
  for (const auto& p : partial)
    for (std::size_t n = 0; n < neurons; ++n) total[n] += p[n];
  ActivationProfile out;
  out.means.resize(neurons);
  for (std::size_t n = 0; n < neurons; ++n) out.means[n] = static_cast<float>(total[n] / static_cast<double>(d.size()));
  out.sample_count = d.size();
  out.model_fingerprint = model_fingerprint(m);
  out.dataset_hash = dataset_hash(d);
  return out;
}

// Sample-count weighted mean of two profiles of the same model.
inline ActivationProfile profile_merge(const ActivationProfile& a, const ActivationProfile& b) {
  if (a.model_fingerprint != b.model_fingerprint) throw FingerprintMismatch("profiles belong to different models");
  if (a.sample_count < 1 || b.sample_count < 1) throw std::invalid_argument("cannot merge an empty profile");
  if (a.means.size() != b.means.size()) throw FingerprintMismatch("profiles cover different neuron counts");
  ActivationProfile out;
  out.sample_count = a.sample_count + b.sample_count;
  out.model_fingerprint = a.model_fingerprint;
  out.dataset_hash = digest_sum(a.dataset_hash, b.dataset_hash);
  out.means.resize(a.means.size());
  const double na = static_cast<double>(a.sample_count), nb = static_cast<double>(b.sample_count);
  for (std::size_t i = 0; i < a.means.size(); ++i)
    out.means[i] = static_cast<float>((double{a.means[i]} * na + double{b.means[i]} * nb) / (na + nb));
  return out;
}

inline void check_profile(const ActivationProfile& p, const ModelGraph& m) {
  if (p.model_fingerprint != model_fingerprint(m))
    throw FingerprintMismatch("profile was computed for a different model");
  if (p.means.size() != ModelIndex(m).neuron_count()) throw FingerprintMismatch("profile neuron count mismatch");
}

inline std::vector<std::uint8_t> serialize_profile(const ActivationProfile& p) {
  ByteWriter w;
  w.bytes("NNSP");
  w.put<std::uint8_t>(kProfileFormatVersion);
  w.bytes(p.model_fingerprint);
  w.bytes(p.dataset_hash);
  w.put<std::uint64_t>(p.sample_count);
  w.floats(p.means);
  return std::move(w).take();
}

inline ActivationProfile deserialize_profile(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "NNSP");
  r.expect_magic("NNSP");
  if (auto v = r.get<std::uint8_t>(); v != kProfileFormatVersion)
    throw FormatError("NNSP: unsupported version " + std::to_string(v));
  ActivationProfile p;
  auto fp = r.bytes(32);
  std::copy(fp.begin(), fp.end(), p.model_fingerprint.begin());
  auto dh = r.bytes(32);
  std::copy(dh.begin(), dh.end(), p.dataset_hash.begin());
  p.sample_count = r.get<std::uint64_t>();
  if (p.sample_count < 1) throw FormatError("NNSP: sample_count must be >= 1");
  if (r.remaining() % sizeof(float)) throw FormatError("NNSP: truncated payload");
  p.means = r.floats(r.remaining() / sizeof(float));
  return p;
}

inline void save_profile(const ActivationProfile& p, const std::filesystem::path& path) {
  write_file(path, serialize_profile(p));
}

inline ActivationProfile load_profile(const std::filesystem::path& path) { return deserialize_profile(read_file(path)); }

// Loads a profile and enforces that it matches `m`.
inline ActivationProfile load_profile(const std::filesystem::path& path, const ModelGraph& m) {
  auto p = load_profile(path);
  check_profile(p, m);
  return p;
}

}  // namespace nnslicer

#pragma once

// NNST tensor container:
//   "NNST" | u8 version=1 | u32 tensor_count
//   | per tensor: u32 rank | u32 dims[rank] | i32 label (-1 = none) | f32 payload

#include <nnslicer/binary_io.hpp>
#include <nnslicer/hash.hpp>
#include <nnslicer/tensor.hpp>

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace nnslicer {

inline constexpr std::uint8_t kTensorFormatVersion = 1;

struct Sample {
  Tensor input;
  int label = -1;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  const Sample& operator[](std::size_t i) const { return samples[i]; }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline std::vector<std::uint8_t> serialize_dataset(const Dataset& d) {
  ByteWriter w;
  w.bytes("NNST");
  w.put<std::uint8_t>(kTensorFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.samples.size()));
  for (const auto& s : d.samples) {
    if (s.label >= 0 && static_cast<std::size_t>(s.label) >= d.class_count)
      throw std::invalid_argument("label " + std::to_string(s.label) + " out of range");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.input.rank()));
    for (auto dim : s.input.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
    w.put<std::int32_t>(s.label);
    w.floats(s.input.data());
  }
  return std::move(w).take();
}

// class_count: labels must be below it. When absent it is inferred as max label + 1.
inline Dataset deserialize_dataset(std::span<const std::uint8_t> bytes, std::optional<std::size_t> class_count = {}) {
  ByteReader r(bytes, "NNST");
  r.expect_magic("NNST");
  auto version = r.get<std::uint8_t>();
  if (version != kTensorFormatVersion) throw FormatError("NNST: unsupported version " + std::to_string(version));
  auto n = r.get<std::uint32_t>();
  Dataset d;
  d.samples.reserve(std::min<std::size_t>(n, r.remaining() / 12));
  int max_label = -1;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw FormatError("NNST: tensor " + std::to_string(i) + " has invalid rank");
    Shape shape(rank);
    for (auto& dim : shape) {
      dim = r.get<std::uint32_t>();
      if (dim == 0) throw FormatError("NNST: tensor " + std::to_string(i) + " has a zero dimension");
    }
    auto label = r.get<std::int32_t>();
    if (label < -1) throw FormatError("NNST: tensor " + std::to_string(i) + " has invalid label");
    auto data = r.floats(element_count(shape));
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw FormatError("NNST: tensor " + std::to_string(i) + " has non-finite values");
    max_label = std::max(max_label, label);
    d.samples.push_back({std::move(t), label});
  }
  if (!r.at_end()) throw FormatError("NNST: trailing bytes after last tensor");
  d.class_count = class_count.value_or(static_cast<std::size_t>(max_label + 1));
  if (max_label >= 0 && static_cast<std::size_t>(max_label) >= d.class_count)
    throw FormatError("NNST: label " + std::to_string(max_label) + " out of range for " +
                      std::to_string(d.class_count) + " classes");
  return d;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) { write_file(path, serialize_dataset(d)); }

inline Dataset load_dataset(const std::filesystem::path& path, std::optional<std::size_t> class_count = {}) {
  return deserialize_dataset(read_file(path), class_count);
}

inline Digest dataset_hash(const Dataset& d) { return sha256(serialize_dataset(d)); }

inline Digest sample_hash(const Tensor& t) {
  ByteWriter w;
  for (auto dim : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
  w.floats(t.data());
  return sha256(w.buffer());
}

// Samples whose label lies in `classes`.
inline Dataset filter_classes(const Dataset& d, std::span<const std::size_t> classes) {
  Dataset out{{}, d.class_count};
  for (const auto& s : d.samples)
    if (s.label >= 0 && std::find(classes.begin(), classes.end(), static_cast<std::size_t>(s.label)) != classes.end())
      out.samples.push_back(s);
  return out;
}

inline Dataset take(const Dataset& d, std::size_t first, std::size_t count) {
  Dataset out{{}, d.class_count};
  for (std::size_t i = first; i < std::min(d.size(), first + count); ++i) out.samples.push_back(d.samples[i]);
  return out;
}

// Seeded random subset without replacement, in original order.
inline Dataset sample_subset(const Dataset& d, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, idx.size()));
  std::sort(idx.begin(), idx.end());
  Dataset out{{}, d.class_count};
  for (auto i : idx) out.samples.push_back(d.samples[i]);
  return out;
}

}  // namespace nnslicer

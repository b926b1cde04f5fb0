#pragma once

// Randomized equivalence check of Slicer against the reference oracle.

#include <nnslicer/reference_slicer.hpp>
#include <nnslicer/zoo.hpp>

#include <array>
#include <string>

namespace nnslicer {

struct OracleCase {
  ModelGraph model;
  ActivationProfile profile;
  Tensor sample;
  std::vector<NeuronId> outputs;
  double theta = 0;
};

inline constexpr std::array<double, 3> kOracleThetas = {0.0, 0.1, 0.3};

inline Tensor random_input(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Case `i` of the suite seeded by `seed`: a random graph, a profile over 8
// random inputs, one more random input, a random non-empty output set and
// theta cycling through kOracleThetas.
inline OracleCase make_oracle_case(std::uint64_t seed, std::size_t i) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(i)};
  std::mt19937_64 rng(seq);
  OracleCase c;
  c.model = random_graph(rng(), {}, i);
  Dataset d{{}, c.model.class_count};
  for (int k = 0; k < 8; ++k) d.samples.push_back({random_input(c.model.input_shape, rng), -1});
  c.profile = profile(c.model, d);
  c.sample = random_input(c.model.input_shape, rng);
  std::vector<std::size_t> classes;
  std::bernoulli_distribution pick(0.5);
  for (std::size_t k = 0; k < c.model.class_count; ++k)
    if (pick(rng)) classes.push_back(k);
  if (classes.empty()) classes.push_back(rng() % c.model.class_count);
  c.outputs = output_neurons(c.model, classes);
  c.theta = kOracleThetas[i % kOracleThetas.size()];
  return c;
}

struct OracleReport {
  std::size_t cases = 0, matches = 0;
  std::vector<std::size_t> mismatched;
  std::string summary() const { return std::to_string(matches) + "/" + std::to_string(cases) + " exact matches"; }
};

inline OracleReport run_oracle_suite(std::uint64_t seed, std::size_t cases, WorkerPool* pool = nullptr) {
  std::vector<std::uint8_t> ok(cases, 0);
  auto one = [&](std::size_t i) {
    auto c = make_oracle_case(seed, i);
    auto fast = backward_slice(c.model, c.profile, c.sample, c.outputs, c.theta);
    auto slow = reference::oracle_backward(c.model, c.profile, c.sample, c.outputs, c.theta);
    ok[i] = fast == slow;
  };
  if (pool) pool->parallel_for(cases, one);
  else
    for (std::size_t i = 0; i < cases; ++i) one(i);
  OracleReport r;
  r.cases = cases;
  for (std::size_t i = 0; i < cases; ++i) {
    if (ok[i]) ++r.matches;
    else r.mismatched.push_back(i);
  }
  return r;
}

}  // namespace nnslicer

#pragma once

#include <nnslicer/digits.hpp>
#include <nnslicer/engine.hpp>
#include <nnslicer/model_io.hpp>
#include <nnslicer/profiler.hpp>
#include <nnslicer/zoo.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

namespace testing_support {

using namespace nnslicer;

inline Tensor vec(std::vector<float> v) {
  Shape s{v.size()};
  return Tensor(s, std::move(v));
}

// Input[1] -> FC(1) -> ReLU -> FC(1) -> Output with scalar weights w1, w2.
inline ModelGraph chain(float w1, float w2) {
  GraphBuilder b({1}, 1);
  b.fc(1, Tensor({1, 1}, {w1}), Tensor({1}));
  b.unary(LayerKind::ReLU);
  b.fc(1, Tensor({1, 1}, {w2}), Tensor({1}));
  return b.finish();
}

inline Dataset single(const Tensor& x, std::size_t classes, int label = -1) { return Dataset{{{x, label}}, classes}; }

inline Dataset random_inputs(const ModelGraph& m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Dataset d{{}, m.class_count};
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(m.input_shape);
    for (auto& v : t.data()) v = u(rng);
    d.samples.push_back({std::move(t), static_cast<int>(i % m.class_count)});
  }
  return d;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nnslicer_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Small trained LeNet shared across tests.
struct SmallFixture {
  Dataset train, test;
  ModelGraph model;
  ActivationProfile profile;
};

inline const SmallFixture& small_fixture() {
  static const SmallFixture f = [] {
    SmallFixture s;
    s.train = digits::generate(2000, 11);
    s.test = digits::generate(400, 12);
    s.model = sgd_train(lenet(5), s.train, TrainConfig{0.05, 32, 2, 5});
    s.profile = profile(s.model, s.train);
    return s;
  }();
  return f;
}

}  // namespace testing_support

#include "helpers.hpp"

#include <nnslicer/attacks.hpp>
#include <nnslicer/detection.hpp>

using namespace nnslicer;
using namespace testing_support;

namespace {

template <class T>
FeatureMatrix<T> matrix(const std::vector<std::vector<T>>& rows) {
  FeatureMatrix<T> X(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) X.at(r, c) = rows[r][c];
  return X;
}

template <class T>
double train_accuracy(const DecisionTree& t, const FeatureMatrix<T>& X, const std::vector<int>& y) {
  std::size_t ok = 0;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = X.row(r);
    ok += t.predict(std::span<const T>(row)) == y[r];
  }
  return static_cast<double>(ok) / static_cast<double>(X.rows());
}

}  // namespace

TEST(Cart, SingleLabelGivesOneLeaf) {
  auto X = matrix<float>({{1, 2}, {3, 4}, {5, 6}});
  std::vector<int> y{2, 2, 2};
  auto t = cart_fit(X, y);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.nodes()[0].label, 2);
}

TEST(Cart, TwoPointsOneSplit) {
  auto X = matrix<float>({{0}, {1}});
  std::vector<int> y{0, 1};
  auto t = cart_fit(X, y, CartConfig{25, 1});
  EXPECT_EQ(t.size(), 3u);
  EXPECT_EQ(train_accuracy(t, X, y), 1.0);
}

TEST(Cart, Xor) {
  for (bool int8 : {false, true}) {
    std::vector<int> y{0, 1, 1, 0};
    if (int8) {
      auto X = matrix<std::int8_t>({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
      auto t = cart_fit(X, y, CartConfig{2, 1});
      EXPECT_EQ(train_accuracy(t, X, y), 1.0);
    } else {
      auto X = matrix<float>({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
      auto t = cart_fit(X, y, CartConfig{2, 1});
      EXPECT_EQ(train_accuracy(t, X, y), 1.0);
      EXPECT_LE(t.depth(), 2u);
    }
  }
}

TEST(Cart, DeterministicAndTypeIndependent) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> v(-1, 1), lab(0, 3);
  FeatureMatrix<std::int8_t> A(300, 40);
  FeatureMatrix<float> B(300, 40);
  std::vector<int> y(300);
  for (std::size_t r = 0; r < 300; ++r) {
    y[r] = lab(rng);
    for (std::size_t c = 0; c < 40; ++c) B.at(r, c) = A.at(r, c) = static_cast<std::int8_t>(v(rng));
  }
  auto t1 = cart_fit(A, y), t2 = cart_fit(A, y);
  EXPECT_EQ(t1, t2);
  auto t3 = cart_fit(B, y);
  EXPECT_EQ(train_accuracy(t1, A, y), train_accuracy(t3, B, y));
}

TEST(Cart, MalformedTreesAreRejected) {
  EXPECT_THROW(DecisionTree(std::vector<TreeNode>{}), std::invalid_argument);
  EXPECT_THROW(DecisionTree({TreeNode{0, 0.5f, -1}, TreeNode{kLeafFeature, 0, 1}}), std::invalid_argument);
  EXPECT_THROW(DecisionTree({TreeNode{kLeafFeature, 0, -1}}), std::invalid_argument);
}

TEST(SliceVector, EmptyAndSingleEntry) {
  auto m = random_graph(2, {}, 0);
  ContributionTable t;
  t.criterion.model_fingerprint = model_fingerprint(m);
  auto v = slice_vector(t, m);
  EXPECT_EQ(v.size(), ModelIndex(m).synapse_count());
  EXPECT_TRUE(std::all_of(v.begin(), v.end(), [](auto x) { return x == 0; }));
  auto id = ModelIndex(m).synapse_at(3);
  t.synapses.push_back({id, -3});
  v = slice_vector(t, m);
  EXPECT_EQ(std::count_if(v.begin(), v.end(), [](auto x) { return x != 0; }), 1);
  EXPECT_EQ(v[3], -3);
}

TEST(Detector, OneTrainingSampleFlagsNothingFromIt) {
  auto m = random_graph(5, {}, 1);
  auto d = random_inputs(m, 8, 2);
  auto p = profile(m, d);
  Slicer s(m, p);
  std::vector<Tensor> one{d[0].input};
  auto trained = train_detector(s, one, 0.1);
  EXPECT_EQ(trained.detector.tree.size(), 1u);
  EXPECT_EQ(trained.train_agreement, 1.0);
  auto v = detect(trained.detector, s, d[0].input);
  EXPECT_FALSE(v.adversarial);
  EXPECT_EQ(static_cast<std::size_t>(v.slice_label), v.model_label);
  EXPECT_EQ(v.model_label, predict(m, std::span<const Tensor>(&d[0].input, 1))[0]);
}

TEST(Detector, LeafDisagreeingWithModelIsAdversarial) {
  auto m = random_graph(5, {}, 1);
  auto d = random_inputs(m, 8, 2);
  auto p = profile(m, d);
  Slicer s(m, p);
  auto label = s.relative(d[1].input).predicted;
  Detector det;
  det.model_fingerprint = s.fingerprint();
  det.vector_length = s.index().synapse_count();
  det.tree = DecisionTree({TreeNode{kLeafFeature, 0, static_cast<int>((label + 1) % m.class_count)}});
  EXPECT_TRUE(detect(det, s, d[1].input).adversarial);
  ContributionTable zero;
  zero.criterion.model_fingerprint = s.fingerprint();
  EXPECT_TRUE(verdict_from_slice(det, zero, m, label).adversarial);
  det.tree.set_leaf_label(0, static_cast<int>(label));
  EXPECT_FALSE(verdict_from_slice(det, zero, m, label).adversarial);
}

TEST(Detector, LabelsComeFromModelPredictions) {
  const auto& f = small_fixture();
  Slicer s(f.model, f.profile);
  std::vector<Tensor> xs;
  for (std::size_t i = 0; i < 40; ++i) xs.push_back(f.train[i].input);
  // Deliberately wrong ground-truth labels must not matter.
  auto trained = train_detector(s, xs, 0.1, CartConfig{25, 1});
  auto pred = predict(f.model, xs);
  std::vector<const Tensor*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  auto verdicts = detect(trained.detector, s, ptrs);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(verdicts[i].model_label, pred[i]);
  EXPECT_GE(trained.train_agreement, 0.95);
}

TEST(DetectorIo, RoundTripAndCorruption) {
  const auto& f = small_fixture();
  Slicer s(f.model, f.profile);
  std::vector<Tensor> xs;
  for (std::size_t i = 0; i < 30; ++i) xs.push_back(f.train[i].input);
  auto det = train_detector(s, xs, 0.1, CartConfig{25, 1}).detector;
  auto dir = temp_dir("detector_io");
  save_detector(det, dir / "d.nnsd");
  EXPECT_EQ(load_detector(dir / "d.nnsd"), det);
  auto bytes = serialize_detector(det);
  bytes.push_back(0);
  EXPECT_THROW(deserialize_detector(bytes), FormatError);
  bytes.resize(bytes.size() - 10);
  EXPECT_THROW(deserialize_detector(bytes), FormatError);
}

TEST(DetectionScore, Counts) {
  std::vector<Verdict> adv{{true, 0, 1}, {true, 0, 1}, {false, 0, 0}};
  std::vector<Verdict> normal{{true, 0, 1}, {false, 0, 0}};
  auto s = score_detection(adv, normal);
  EXPECT_EQ(s.true_positive, 2u);
  EXPECT_EQ(s.false_negative, 1u);
  EXPECT_EQ(s.false_positive, 1u);
  EXPECT_EQ(s.true_negative, 1u);
  EXPECT_DOUBLE_EQ(s.precision(), 2.0 / 3);
  EXPECT_DOUBLE_EQ(s.recall(), 2.0 / 3);
}

TEST(Attacks, ZeroEpsilonReturnsInput) {
  const auto& f = small_fixture();
  const auto& x = f.test[0].input;
  auto label = static_cast<std::size_t>(f.test[0].label);
  EXPECT_TRUE(bit_identical(fgsm(f.model, x, label, 0.0), x));
  EXPECT_TRUE(bit_identical(pgd(f.model, x, label, PgdConfig{0.0, 0.01, 5, 1}), x));
  EXPECT_THROW(fgsm(f.model, x, label, -0.1), std::invalid_argument);
}

TEST(Attacks, StayInsideTheBallAndPixelRange) {
  const auto& f = small_fixture();
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& x = f.test[i].input;
    auto label = static_cast<std::size_t>(f.test[i].label);
    for (double eps : {2.0 / 256, 8.0 / 256, 0.3}) {
      for (const auto& a : {fgsm(f.model, x, label, eps), pgd(f.model, x, label, PgdConfig{eps, eps / 4, 5, i})}) {
        EXPECT_LE(linf_distance(a, x), eps);
        for (float v : a.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
      }
    }
  }
}

TEST(Attacks, LargeEpsilonFoolsTheModel) {
  const auto& f = small_fixture();
  Network<float> net(f.model);
  std::size_t fooled = 0, tried = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& s = f.test[i];
    auto label = static_cast<std::size_t>(s.label);
    if (predict(f.model, std::span<const Tensor>(&s.input, 1))[0] != label) continue;
    ++tried;
    auto a = pgd(net, s.input, label, PgdConfig{0.3, 0.02, 20, i});
    fooled += predict(f.model, std::span<const Tensor>(&a, 1))[0] != label;
  }
  EXPECT_GT(tried, 0u);
  EXPECT_GE(fooled * 2, tried);
}

#include "helpers.hpp"

#include <nnslicer/protection.hpp>
#include <nnslicer/pruning.hpp>
#include <nnslicer/report.hpp>

#include <fstream>

using namespace nnslicer;
using namespace testing_support;

namespace {

const std::vector<std::size_t> kTargets{0, 1};

const ContributionTable& fixture_table() {
  static const ContributionTable t = [] {
    const auto& f = small_fixture();
    Slicer s(f.model, f.profile);
    return target_contributions(s, take(f.train, 0, 300), kTargets, 0.1);
  }();
  return t;
}

double class_frequency(const Dataset& d, int c) {
  return static_cast<double>(std::count_if(d.samples.begin(), d.samples.end(), [&](const auto& s) { return s.label == c; })) /
         static_cast<double>(d.size());
}

}  // namespace

TEST(Pruning, ZeroRatioIsBitIdentical) {
  const auto& f = small_fixture();
  for (auto mode : {SelectionMode::Contribution, SelectionMode::WeightMagnitude, SelectionMode::Random}) {
    auto out = prune(f.model, &fixture_table(), PruneConfig{kTargets, 0.0, 0.1f, mode, 1});
    EXPECT_EQ(serialize_model(out), serialize_model(f.model));
  }
}

TEST(Pruning, FullRatioZeroesEverything) {
  const auto& f = small_fixture();
  auto out = prune(f.model, &fixture_table(), PruneConfig{kTargets, 1.0, 0.1f, SelectionMode::Contribution, 0});
  for (const auto& L : out.layers) {
    if (L.weights) {
      for (float w : L.weights->data()) ASSERT_EQ(w, 0.0f);
    }
    if (L.bias) {
      for (float b : L.bias->data()) ASSERT_EQ(b, 0.0f);
    }
  }
  EXPECT_DOUBLE_EQ(evaluate(out, f.test), class_frequency(f.test, 0));
}

TEST(Pruning, PrefixesAreNested) {
  const auto& f = small_fixture();
  ModelIndex idx(f.model);
  for (auto mode : {SelectionMode::Contribution, SelectionMode::WeightMagnitude, SelectionMode::Random}) {
    std::vector<std::size_t> prev;
    for (double r : {0.1, 0.3, 0.5, 0.7}) {
      auto cut = pruned_synapses(f.model, &fixture_table(), PruneConfig{kTargets, r, 0.1f, mode, 3});
      EXPECT_TRUE(std::includes(cut.begin(), cut.end(), prev.begin(), prev.end())) << mode_name(mode) << " " << r;
      std::size_t expect = 0;
      for (std::size_t l = 0; l < f.model.layers.size(); ++l)
        expect += static_cast<std::size_t>(std::floor(r * static_cast<double>(idx.synapse_count(l))));
      EXPECT_EQ(cut.size(), expect);
      prev = cut;
    }
  }
}

TEST(Pruning, ContributionOrderIsAscendingPerLayer) {
  const auto& f = small_fixture();
  const auto& t = fixture_table();
  ModelIndex idx(f.model);
  auto cut = pruned_synapses(f.model, &t, PruneConfig{kTargets, 0.5, 0.1f, SelectionMode::Contribution, 0});
  std::vector<std::uint8_t> is_cut(idx.synapse_count(), 0);
  for (auto s : cut) is_cut[s] = 1;
  for (std::size_t l = 0; l < f.model.layers.size(); ++l) {
    std::int64_t max_cut = 0, min_kept = INT64_MAX;
    for (std::size_t k = 0; k < idx.synapse_count(l); ++k) {
      auto s = idx.synapse_offset(l) + k;
      auto c = std::abs(t.synapse(idx.synapse_at(s)));
      if (is_cut[s]) max_cut = std::max(max_cut, c);
      else min_kept = std::min(min_kept, c);
    }
    if (idx.synapse_count(l)) {
      EXPECT_LE(max_cut, min_kept) << "layer " << l;
    }
  }
}

TEST(Pruning, FineTuneKeepsPrunedWeightsAtZero) {
  const auto& f = small_fixture();
  auto cut = pruned_synapses(f.model, &fixture_table(), PruneConfig{kTargets, 0.7, 0.1f, SelectionMode::Contribution, 0});
  auto pruned = apply_pruning(f.model, cut);
  auto tuned = fine_tune(pruned, cut, filter_classes(take(f.train, 0, 500), kTargets), TrainConfig{0.05, 32, 1, 0});
  ModelIndex idx(f.model);
  for (auto s : cut) {
    auto id = idx.synapse_at(s);
    ASSERT_EQ((*tuned.layers[id.layer].weights)[s - idx.synapse_offset(id.layer)], 0.0f);
  }
  for (auto n : pruned_neurons(pruned)) EXPECT_EQ((*tuned.layers[n.layer].bias)[n.unit], 0.0f);
  EXPECT_NE(tuned, pruned);
  EXPECT_EQ(fine_tune(pruned, cut, filter_classes(f.train, kTargets), TrainConfig{0.0, 32, 1, 0}), pruned);
}

TEST(Pruning, BadConfigsAreRejected) {
  const auto& f = small_fixture();
  EXPECT_THROW(prune(f.model, nullptr, PruneConfig{kTargets, 0.5, 0.1f, SelectionMode::Contribution, 0}),
               std::invalid_argument);
  EXPECT_THROW(prune(f.model, nullptr, PruneConfig{kTargets, 1.5, 0.1f, SelectionMode::Random, 0}), std::invalid_argument);
  EXPECT_EQ(parse_mode("weight"), SelectionMode::WeightMagnitude);
  EXPECT_FALSE(parse_mode("magic"));
}

TEST(Protection, FullFractionSelectsEverything) {
  const auto& f = small_fixture();
  auto p = select_protected(f.model, &fixture_table(), 1.0);
  EXPECT_EQ(p.hidden.size(), ModelIndex(f.model).synapse_count());
}

TEST(Protection, HalfFractionMatchesFullSort) {
  const auto& f = small_fixture();
  const auto& t = fixture_table();
  ModelIndex idx(f.model);
  auto p = select_protected(f.model, &t, 0.5);
  EXPECT_EQ(p.hidden.size(), idx.synapse_count() / 2);
  std::vector<std::int64_t> mag(idx.synapse_count(), 0);
  for (const auto& [id, c] : t.synapses) mag[idx.flat(id)] = std::abs(c);
  std::vector<std::uint8_t> chosen(mag.size(), 0);
  for (auto s : p.hidden) chosen[s] = 1;
  std::int64_t min_chosen = INT64_MAX, max_other = 0;
  for (std::size_t s = 0; s < mag.size(); ++s) {
    if (chosen[s]) min_chosen = std::min(min_chosen, mag[s]);
    else max_other = std::max(max_other, mag[s]);
  }
  EXPECT_GE(min_chosen, max_other);
}

TEST(Protection, RandomSelectionDiffersFromContribution) {
  const auto& f = small_fixture();
  auto a = select_protected(f.model, &fixture_table(), 0.5, SelectionMode::Contribution);
  auto b = select_protected(f.model, nullptr, 0.5, SelectionMode::Random, 1);
  auto c = select_protected(f.model, nullptr, 0.5, SelectionMode::Random, 1);
  EXPECT_EQ(a.hidden.size(), b.hidden.size());
  EXPECT_NE(a.hidden, b.hidden);
  EXPECT_EQ(b.hidden, c.hidden);
}

TEST(Protection, EmptyHiddenSetIsPassThrough) {
  const auto& f = small_fixture();
  ProtectionSet none;
  auto r = simulate_extraction(f.model, none, take(f.train, 0, 100), f.test, kTargets, {});
  EXPECT_EQ(r.recovered, f.model);
  EXPECT_DOUBLE_EQ(r.all_accuracy, evaluate(f.model, f.test));
  EXPECT_DOUBLE_EQ(r.target_accuracy, evaluate(f.model, f.test, kTargets));
}

TEST(Protection, EverythingHiddenWithTinyBudget) {
  const auto& f = small_fixture();
  auto all = select_protected(f.model, nullptr, 1.0, SelectionMode::Random, 0);
  ExtractionConfig cfg;
  cfg.train.epochs = 1;
  auto r = simulate_extraction(f.model, all, take(f.train, 0, 40), f.test, kTargets, cfg);
  // A constant predictor scores 1/|targets| on the target classes.
  EXPECT_LE(r.all_accuracy, 0.3);
  EXPECT_LE(r.target_accuracy, 0.5);
}

TEST(Report, EmptyTableIsHeaderOnly) {
  Table t{{"a", "b"}, {}};
  EXPECT_EQ(to_csv(t), "a,b\n");
  EXPECT_EQ(to_json(t).dump(), "[]");
}

TEST(Report, CsvAndJsonAgree) {
  Table t{{"name", "x", "n"}, {}};
  t.add({std::string("p,q"), 0.5, std::int64_t{3}});
  t.add({std::string("r"), std::nan(""), std::int64_t{-1}});
  EXPECT_EQ(to_csv(t), "name,x,n\n\"p,q\",0.5,3\nr,nan,-1\n");
  auto j = to_json(t);
  EXPECT_EQ(j[0]["name"], "p,q");
  EXPECT_EQ(j[0]["x"], 0.5);
  EXPECT_TRUE(j[1]["x"].is_null());
  auto dir = temp_dir("report");
  write_table(t, dir / "r");
  EXPECT_TRUE(std::filesystem::exists(dir / "r.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "r.json"));
  EXPECT_THROW(t.add({std::string("short")}), std::invalid_argument);
}

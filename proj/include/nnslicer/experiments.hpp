#pragma once

// Desk-scale experiment drivers shared by the CLI and the acceptance suite:
// a trained LeNet on synthetic digits, adversarial detection, targeted pruning
// and selective protection.

#include <nnslicer/attacks.hpp>
#include <nnslicer/detection.hpp>
#include <nnslicer/digits.hpp>
#include <nnslicer/profiler.hpp>
#include <nnslicer/protection.hpp>
#include <nnslicer/pruning.hpp>
#include <nnslicer/report.hpp>
#include <nnslicer/zoo.hpp>

#include <set>

namespace nnslicer::experiments {

struct FixtureConfig {
  std::size_t train_size = 10000;
  std::size_t test_size = 2000;
  std::size_t epochs = 4;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;
};

struct Fixture {
  Dataset train, test;
  ModelGraph model;
  ActivationProfile profile;
  double test_accuracy = 0;
};

inline Fixture build_fixture(const FixtureConfig& cfg, WorkerPool* pool = nullptr) {
  Fixture f;
  f.train = digits::generate(cfg.train_size, cfg.seed * 2 + 1);
  f.test = digits::generate(cfg.test_size, cfg.seed * 2 + 2);
  TrainConfig tc{cfg.learning_rate, 32, cfg.epochs, cfg.seed};
  f.model = sgd_train(lenet(cfg.seed), f.train, tc);
  f.profile = profile(f.model, f.train, pool);
  f.test_accuracy = evaluate(f.model, f.test, {}, pool);
  return f;
}

// First `count` samples of `d` the model classifies correctly.
inline Dataset correctly_classified(const ModelGraph& m, const Dataset& d, std::size_t count, WorkerPool* pool = nullptr) {
  std::vector<Tensor> xs;
  for (const auto& s : d.samples) xs.push_back(s.input);
  auto pred = predict(m, xs, pool);
  Dataset out{{}, d.class_count};
  for (std::size_t i = 0; i < d.size() && out.size() < count; ++i)
    if (d.samples[i].label >= 0 && pred[i] == static_cast<std::size_t>(d.samples[i].label)) out.samples.push_back(d.samples[i]);
  return out;
}

// ---------------------------------------------------------------- detection

struct AttackSpec {
  std::string name;
  bool projected = false;  // PGD when true, FGSM otherwise
  double eps = 0;
};

inline std::vector<AttackSpec> default_attacks() {
  return {{"FGSM_2", false, 2.0 / 256}, {"FGSM_4", false, 4.0 / 256}, {"FGSM_8", false, 8.0 / 256},
          {"RPGD_8", true, 8.0 / 256}};
}

struct DetectionConfig {
  double theta = 0.1;
  std::size_t detector_samples = 5000;
  std::size_t attack_samples = 200;
  std::vector<AttackSpec> attacks = default_attacks();
  double pgd_step = 1.0 / 256;
  std::size_t pgd_iterations = 20;
  CartConfig cart;
  std::uint64_t seed = 0;
};

struct AttackOutcome {
  AttackSpec attack;
  std::size_t attempted = 0, successful = 0;
  DetectionScore score;
};

struct DetectionOutcome {
  Detector detector;
  double train_agreement = 0;
  std::size_t clean_flagged = 0, clean_count = 0;
  std::vector<AttackOutcome> attacks;
};

// Adversarial examples of `clean` under `a`; entry i is empty when the attack did not change the prediction.
inline std::vector<std::optional<Tensor>> run_attack(const ModelGraph& m, const Dataset& clean, const AttackSpec& a,
                                                     const DetectionConfig& cfg, WorkerPool* pool = nullptr) {
  Network<float> net(m);
  std::vector<std::optional<Tensor>> out(clean.size());
  auto one = [&](std::size_t i) {
    const auto& s = clean.samples[i];
    const auto label = static_cast<std::size_t>(s.label);
    Tensor adv = a.projected ? pgd(net, s.input, label, PgdConfig{a.eps, cfg.pgd_step, cfg.pgd_iterations, cfg.seed + i})
                             : fgsm(net, s.input, label, a.eps);
    typename Network<float>::State st;
    net.forward(adv.data(), st);
    if (argmax(st.act.back().begin(), st.act.back().end()) != label) out[i] = std::move(adv);
  };
  if (pool) pool->parallel_for(clean.size(), one);
  else
    for (std::size_t i = 0; i < clean.size(); ++i) one(i);
  return out;
}

// Scores `det` on every attack: the successful adversarial examples of `clean`
// are positives, their clean originals negatives.
inline DetectionOutcome evaluate_detector(const ModelGraph& m, const ActivationProfile& p, const Detector& det,
                                          const Dataset& clean, const DetectionConfig& cfg, WorkerPool* pool = nullptr) {
  Slicer slicer(m, p);
  DetectionOutcome out;
  out.detector = det;
  std::vector<const Tensor*> cp;
  for (const auto& s : clean.samples) cp.push_back(&s.input);
  auto clean_verdicts = detect(det, slicer, cp, pool);
  out.clean_count = clean.size();
  for (const auto& v : clean_verdicts) out.clean_flagged += v.adversarial;

  for (const auto& a : cfg.attacks) {
    auto adv = run_attack(m, clean, a, cfg, pool);
    std::vector<const Tensor*> ap;
    std::vector<Verdict> originals;
    for (std::size_t i = 0; i < adv.size(); ++i)
      if (adv[i]) {
        ap.push_back(&*adv[i]);
        originals.push_back(clean_verdicts[i]);
      }
    auto verdicts = detect(det, slicer, ap, pool);
    out.attacks.push_back({a, clean.size(), ap.size(), score_detection(verdicts, originals)});
  }
  return out;
}

// Detector trained on the first cfg.detector_samples training samples, scored
// on cfg.attack_samples correctly classified test samples.
inline DetectionOutcome run_detection(const Fixture& f, const DetectionConfig& cfg, WorkerPool* pool = nullptr,
                                      std::span<const std::uint8_t> usable = {}) {
  Slicer slicer(f.model, f.profile);
  std::vector<Tensor> normal;
  for (std::size_t i = 0; i < std::min(cfg.detector_samples, f.train.size()); ++i) normal.push_back(f.train.samples[i].input);
  auto trained = train_detector(slicer, normal, cfg.theta, cfg.cart, pool, usable);
  auto clean = correctly_classified(f.model, f.test, cfg.attack_samples, pool);
  auto out = evaluate_detector(f.model, f.profile, trained.detector, clean, cfg, pool);
  out.train_agreement = trained.train_agreement;
  return out;
}

inline Table detection_table(const DetectionOutcome& d) {
  Table t{{"attack", "eps", "attempted", "successful", "f1", "precision", "recall", "tp", "fp", "fn", "tn"}, {}};
  for (const auto& a : d.attacks)
    t.add({a.attack.name, a.attack.eps, static_cast<std::int64_t>(a.attempted), static_cast<std::int64_t>(a.successful),
           a.score.f1(), a.score.precision(), a.score.recall(), static_cast<std::int64_t>(a.score.true_positive),
           static_cast<std::int64_t>(a.score.false_positive), static_cast<std::int64_t>(a.score.false_negative),
           static_cast<std::int64_t>(a.score.true_negative)});
  return t;
}

// ---------------------------------------------------------------- pruning

// `count` distinct seeded subsets of `size` classes each, classes ascending.
inline std::vector<std::vector<std::size_t>> class_subsets(std::size_t classes, std::size_t size, std::size_t count,
                                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> all(classes);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t guard = 0; out.size() < count && guard < 100000; ++guard) {
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<std::size_t> s(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(size));
    std::sort(s.begin(), s.end());
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

struct PruningConfig {
  std::size_t subsets = 10;
  std::size_t subset_size = 2;
  double ratio = 0.5;
  double theta = 0.1;
  double finetune_ratio = 0.7;
  TrainConfig finetune{0.05, 32, 1, 0};
  std::size_t slice_samples = 0;  // per subset; 0 = every target-class training sample
  std::uint64_t seed = 0;
};

struct PruningRow {
  std::vector<std::size_t> targets;
  double unpruned = 0;
  double contrib = 0, weight = 0, random = 0;
  double finetuned_contrib = 0, pruned_contrib_at_finetune_ratio = 0;
};

inline std::string join_classes(std::span<const std::size_t> c) {
  std::string s;
  for (std::size_t i = 0; i < c.size(); ++i) s += (i ? "+" : "") + std::to_string(c[i]);
  return s;
}

inline ContributionTable subset_contributions(const Fixture& f, const Slicer& slicer, std::span<const std::size_t> targets,
                                              double theta, std::size_t limit, WorkerPool* pool) {
  auto data = filter_classes(f.train, targets);
  if (limit && data.size() > limit) data = take(data, 0, limit);
  return target_contributions(slicer, data, targets, theta, pool);
}

inline std::vector<PruningRow> run_pruning(const Fixture& f, const PruningConfig& cfg, WorkerPool* pool = nullptr) {
  Slicer slicer(f.model, f.profile);
  std::vector<PruningRow> rows;
  for (const auto& targets : class_subsets(f.model.class_count, cfg.subset_size, cfg.subsets, cfg.seed)) {
    PruningRow r;
    r.targets = targets;
    auto table = subset_contributions(f, slicer, targets, cfg.theta, cfg.slice_samples, pool);
    auto acc = [&](const ModelGraph& g) { return evaluate(g, f.test, targets, pool); };
    r.unpruned = acc(f.model);
    PruneConfig pc{targets, cfg.ratio, static_cast<float>(cfg.theta), SelectionMode::Contribution, cfg.seed};
    r.contrib = acc(prune(f.model, &table, pc));
    pc.mode = SelectionMode::WeightMagnitude;
    r.weight = acc(prune(f.model, nullptr, pc));
    pc.mode = SelectionMode::Random;
    r.random = acc(prune(f.model, nullptr, pc));

    pc.mode = SelectionMode::Contribution;
    pc.ratio = cfg.finetune_ratio;
    auto cut = pruned_synapses(f.model, &table, pc);
    auto pruned = apply_pruning(f.model, cut);
    r.pruned_contrib_at_finetune_ratio = acc(pruned);
    auto tc = cfg.finetune;
    tc.seed = cfg.seed;
    r.finetuned_contrib = acc(fine_tune(pruned, cut, filter_classes(f.train, targets), tc));
    rows.push_back(r);
  }
  return rows;
}

inline Table pruning_table(std::span<const PruningRow> rows) {
  Table t{{"targets", "unpruned", "contrib", "weight", "random", "contrib_at_finetune_ratio", "contrib_finetuned"}, {}};
  for (const auto& r : rows)
    t.add({join_classes(r.targets), r.unpruned, r.contrib, r.weight, r.random, r.pruned_contrib_at_finetune_ratio,
           r.finetuned_contrib});
  return t;
}

// Target-class accuracy against prune ratio for one selection mode.
inline Table prune_sweep(const ModelGraph& m, const ContributionTable* t, const Dataset& eval,
                         std::span<const std::size_t> targets, SelectionMode mode, std::span<const double> ratios,
                         std::uint64_t seed, WorkerPool* pool = nullptr) {
  Table s = series_table("ratio", "accuracy");
  for (double r : ratios) {
    PruneConfig pc{{targets.begin(), targets.end()}, r, 0, mode, seed};
    s.add({r, evaluate(prune(m, t, pc), eval, targets, pool)});
  }
  return s;
}

// ---------------------------------------------------------------- protection

struct ProtectionConfig {
  std::size_t subsets = 3;
  std::size_t subset_size = 2;
  double fraction = 0.5;
  double theta = 0.1;
  std::size_t budget = 5000;
  std::size_t epochs = 5;
  bool attacker_has_targets = true;
  std::size_t slice_samples = 0;
  ExtractionConfig extraction;
  std::uint64_t seed = 0;
};

struct ProtectionRow {
  std::vector<std::size_t> targets;
  std::string mode;
  double target_accuracy = 0, all_accuracy = 0;
};

// Attacker data: `budget` training samples; the target classes are left out
// when !cfg.attacker_has_targets.
inline Dataset attacker_data(const Fixture& f, std::span<const std::size_t> targets, const ProtectionConfig& cfg) {
  Dataset pool{{}, f.train.class_count};
  for (const auto& s : f.train.samples) {
    bool is_target = std::find(targets.begin(), targets.end(), static_cast<std::size_t>(s.label)) != targets.end();
    if (cfg.attacker_has_targets || !is_target) pool.samples.push_back(s);
  }
  return sample_subset(pool, cfg.budget, cfg.seed);
}

inline std::vector<ProtectionRow> run_protection(const Fixture& f, const ProtectionConfig& cfg, WorkerPool* pool = nullptr) {
  Slicer slicer(f.model, f.profile);
  std::vector<ProtectionRow> rows;
  for (const auto& targets : class_subsets(f.model.class_count, cfg.subset_size, cfg.subsets, cfg.seed + 1)) {
    auto table = subset_contributions(f, slicer, targets, cfg.theta, cfg.slice_samples, pool);
    auto data = attacker_data(f, targets, cfg);
    auto ec = cfg.extraction;
    ec.train.epochs = cfg.epochs;
    ec.train.seed = cfg.seed;
    ec.seed = cfg.seed;
    for (auto mode : {SelectionMode::Contribution, SelectionMode::Random, SelectionMode::WeightMagnitude}) {
      auto hidden = select_protected(f.model, &table, cfg.fraction, mode, cfg.seed);
      auto r = simulate_extraction(f.model, hidden, data, f.test, targets, ec, pool);
      rows.push_back({targets, std::string(mode_name(mode)), r.target_accuracy, r.all_accuracy});
    }
  }
  return rows;
}

inline Table protection_table(std::span<const ProtectionRow> rows) {
  Table t{{"targets", "mode", "target_accuracy", "all_accuracy"}, {}};
  for (const auto& r : rows) t.add({join_classes(r.targets), r.mode, r.target_accuracy, r.all_accuracy});
  return t;
}

}  // namespace nnslicer::experiments

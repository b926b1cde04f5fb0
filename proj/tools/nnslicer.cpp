// nnslicer command-line tool.
//
// Exit codes: 0 success, 2 invalid arguments/inputs, 1 runtime failure.

#include <nnslicer/experiments.hpp>
#include <nnslicer/model_io.hpp>
#include <nnslicer/oracle_suite.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace nnslicer;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::string config;
};

std::size_t default_workers() {
  if (const char* env = std::getenv("NNSLICER_WORKERS")) {
    try {
      auto v = std::stoul(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
    throw UsageError("NNSLICER_WORKERS must be a positive integer");
  }
  return 1;
}

std::vector<std::size_t> parse_classes(const std::string& s, std::size_t class_count) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size()) throw UsageError("--outputs: '" + item + "' is not a class index");
    if (v >= class_count) throw UsageError("--outputs: class " + item + " out of range");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--outputs needs at least one class index");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<double> parse_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || !std::isfinite(v)) throw UsageError(flag + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::exists(path)) throw UsageError(flag + ": no such file: " + path);
}

void require_theta(double theta) {
  if (!(theta >= 0) || !std::isfinite(theta)) throw UsageError("--theta must be >= 0");
}

fs::path out_dir(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
  return out;
}

void print_metrics(const Table& t) { std::cout << to_csv(t); }

Dataset load_data(const std::string& path, const ModelGraph& m) {
  auto d = load_dataset(path, m.class_count);
  for (const auto& s : d.samples)
    if (s.input.shape() != m.input_shape)
      throw UsageError("dataset sample shape " + shape_string(s.input.shape()) + " does not match model input " +
                       shape_string(m.input_shape));
  return d;
}

std::vector<const Tensor*> inputs_of(const Dataset& d) {
  std::vector<const Tensor*> xs;
  for (const auto& s : d.samples) xs.push_back(&s.input);
  return xs;
}

std::string sample_file(std::size_t i) {
  std::ostringstream os;
  os << "sample_" << std::setw(6) << std::setfill('0') << i << ".nnsl";
  return os.str();
}

// Appends "--key value" for every config entry the invoked subcommand knows and
// the command line did not set. Options use TakeFirst, so command-line flags win.
std::vector<std::string> config_args(const std::string& path, CLI::App* sub) {
  std::ifstream f(path);
  if (!f) throw UsageError("--config: cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("--config: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("--config must hold a JSON object");
  std::vector<std::string> out;
  for (auto& [key, value] : j.items()) {
    if (key == "config") continue;
    const CLI::Option* opt = nullptr;
    for (CLI::App* a = sub; a && !opt; a = a->get_parent()) opt = a->get_option_no_throw("--" + key);
    if (!opt) throw UsageError("--config: unknown option '" + key + "' for this subcommand");
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back("--" + key);
      continue;
    }
    out.push_back("--" + key);
    out.push_back(value.is_string() ? value.get<std::string>() : value.dump());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nnslicer: dynamic slicing of convolutional networks and its applications"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeFirst);
  app.footer(
      "Reports: every subcommand writes <out>/report.csv with columns metric,value and a JSON mirror report.json.\n"
      "detect eval writes detection.csv: attack,eps,attempted,successful,f1,precision,recall,tp,fp,fn,tn.\n"
      "prune --sweep writes sweep_<mode>.csv with columns ratio,accuracy.\n"
      "protect writes protection.csv: targets,mode,target_accuracy,all_accuracy.\n"
      "Environment: NNSLICER_WORKERS sets the default for --workers.");

  Common common;
  try {
    common.workers = default_workers();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  app.add_option("--workers", common.workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", common.seed, "seed for every random choice");
  app.add_option("--config", common.config, "JSON file of option values; command-line flags win");

  std::string model, profile_path, data, test, outputs, mode = "contrib", out, detector_path, init, sweep;
  double theta = 0.1, ratio = 0.5, fraction = 0.5, eps = 8.0 / 256, lr = 0.05;
  std::size_t epochs = 1, count = 10000, batch = 32, cases = 100, samples = 5000, budget = 5000, max_depth = 25,
              min_leaf = 5, iterations = 20;
  bool attacker_has_targets = true, train_exposed = false;
  std::string attack_kind = "fgsm", eps_list = "0.0078125,0.015625,0.03125";

  auto* gen = app.add_subcommand("gen-data", "generate synthetic MNIST-format digits (NNST)");
  gen->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--out", out, "output NNST file")->required();

  auto* train = app.add_subcommand("train", "train a model with SGD (LeNet for [1,28,28] digits unless --model)");
  train->add_option("--model", init, "initial model (NNSM)");
  train->add_option("--data", data, "training set (NNST)")->required();
  train->add_option("--test", test, "evaluation set (NNST)");
  train->add_option("--epochs", epochs, "epochs");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--batch", batch, "minibatch size")->check(CLI::PositiveNumber);
  train->add_option("--out", out, "output directory")->required();

  auto* prof = app.add_subcommand("profile", "compute the activation profile of a dataset");
  prof->add_option("--model", model)->required();
  prof->add_option("--data", data)->required();
  prof->add_option("--out", out, "output NNSP file")->required();

  auto* slice = app.add_subcommand("slice", "slice every sample for the given outputs, plus their aggregate");
  slice->add_option("--model", model)->required();
  slice->add_option("--profile", profile_path)->required();
  slice->add_option("--data", data)->required();
  slice->add_option("--outputs", outputs, "comma list of class indices")->required();
  slice->add_option("--theta", theta);
  slice->add_option("--out", out, "output directory")->required();

  auto* detect_cmd = app.add_subcommand("detect", "adversarial-input detection");
  detect_cmd->require_subcommand(1);
  auto* dtrain = detect_cmd->add_subcommand("train", "train a slice-shape detector on normal samples");
  dtrain->add_option("--model", model)->required();
  dtrain->add_option("--profile", profile_path)->required();
  dtrain->add_option("--data", data, "normal samples")->required();
  dtrain->add_option("--samples", samples, "use the first N samples");
  dtrain->add_option("--theta", theta);
  dtrain->add_option("--max-depth", max_depth);
  dtrain->add_option("--min-leaf", min_leaf)->check(CLI::PositiveNumber);
  dtrain->add_option("--out", out, "output directory")->required();
  auto* deval = detect_cmd->add_subcommand("eval", "attack correctly classified samples and score the detector");
  deval->add_option("--model", model)->required();
  deval->add_option("--profile", profile_path)->required();
  deval->add_option("--detector", detector_path)->required();
  deval->add_option("--data", data, "clean evaluation samples")->required();
  deval->add_option("--samples", samples, "attack the first N correctly classified samples");
  deval->add_option("--eps", eps_list, "comma list of FGSM epsilons (a PGD attack at the largest is added)");
  deval->add_option("--iterations", iterations, "PGD iterations");
  deval->add_option("--out", out, "output directory")->required();

  auto* attack = app.add_subcommand("attack", "generate adversarial examples");
  attack->add_option("--model", model)->required();
  attack->add_option("--data", data)->required();
  attack->add_option("--kind", attack_kind, "fgsm or pgd")->check(CLI::IsMember({"fgsm", "pgd"}));
  attack->add_option("--eps", eps);
  attack->add_option("--iterations", iterations, "PGD iterations");
  attack->add_option("--out", out, "output directory")->required();

  auto* prune_cmd = app.add_subcommand("prune", "prune a model for target classes");
  prune_cmd->add_option("--model", model)->required();
  prune_cmd->add_option("--profile", profile_path);
  prune_cmd->add_option("--data", data, "training set: target-class samples form the criterion")->required();
  prune_cmd->add_option("--test", test, "evaluation set");
  prune_cmd->add_option("--outputs", outputs, "target classes")->required();
  prune_cmd->add_option("--ratio", ratio);
  prune_cmd->add_option("--mode", mode)->check(CLI::IsMember({"contrib", "weight", "random"}));
  prune_cmd->add_option("--theta", theta);
  prune_cmd->add_option("--epochs", epochs, "masked fine-tuning epochs (0 = none)");
  prune_cmd->add_option("--lr", lr, "fine-tuning learning rate");
  prune_cmd->add_option("--sweep", sweep, "comma list of ratios; writes accuracy series for every mode");
  prune_cmd->add_option("--out", out, "output directory")->required();

  auto* protect = app.add_subcommand("protect", "hide synapses and simulate a retraining attacker");
  protect->add_option("--model", model)->required();
  protect->add_option("--profile", profile_path);
  protect->add_option("--data", data, "training set (criterion samples and attacker pool)")->required();
  protect->add_option("--test", test, "evaluation set")->required();
  protect->add_option("--outputs", outputs, "target classes")->required();
  protect->add_option("--fraction", fraction);
  protect->add_option("--mode", mode)->check(CLI::IsMember({"contrib", "weight", "random"}));
  protect->add_option("--theta", theta);
  protect->add_option("--budget", budget, "attacker training samples");
  protect->add_option("--epochs", epochs, "attacker epochs");
  protect->add_option("--lr", lr, "attacker learning rate");
  protect->add_option("--attacker-has-targets", attacker_has_targets, "attacker data includes the target classes");
  protect->add_flag("--train-exposed", train_exposed, "attacker also updates exposed weights");
  protect->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "accuracy of a model on a dataset");
  eval->add_option("--model", model)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--outputs", outputs, "restrict to samples of these classes");
  eval->add_option("--out", out, "output directory");

  auto* oracle = app.add_subcommand("oracle-check", "compare the slicer against the reference oracle");
  oracle->add_option("--cases", cases)->check(CLI::PositiveNumber);
  oracle->add_option("--out", out, "output directory");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    // The config file is read before parsing so that required options can come from it.
    std::string config_path;
    CLI::App* leaf = &app;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[++i];
      else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
      else if (auto* sub = leaf->get_subcommand_no_throw(args[i]); sub && args[i][0] != '-') leaf = sub;
    }
    if (!config_path.empty()) {
      auto extra = config_args(config_path, leaf);
      args.insert(args.end(), extra.begin(), extra.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    WorkerPool pool(common.workers);
    Table report = metric_table();
    fs::path report_dir;

    if (gen->parsed()) {
      auto d = digits::generate(count, common.seed);
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      save_dataset(d, out);
      report.add({"samples", static_cast<std::int64_t>(d.size())});
      report.add({"dataset_hash", to_hex(dataset_hash(d))});
    } else if (train->parsed()) {
      report_dir = out_dir(out);
      ModelGraph m;
      if (!init.empty()) {
        require_file(init, "--model");
        m = load_model(init);
      } else {
        m = lenet(common.seed);
      }
      require_file(data, "--data");
      auto d = load_data(data, m);
      TrainReport tr;
      m = sgd_train(m, d, TrainConfig{lr, batch, epochs, common.seed}, nullptr, &tr);
      save_model(m, report_dir / "model.nnsm");
      for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e) report.add({"loss_epoch_" + std::to_string(e), tr.epoch_loss[e]});
      report.add({"train_accuracy", evaluate(m, d, {}, &pool)});
      if (!test.empty()) {
        require_file(test, "--test");
        report.add({"test_accuracy", evaluate(m, load_data(test, m), {}, &pool)});
      }
      report.add({"model_fingerprint", to_hex(model_fingerprint(m))});
    } else if (prof->parsed()) {
      require_file(model, "--model");
      require_file(data, "--data");
      auto m = load_model(model);
      auto d = load_data(data, m);
      auto p = profile(m, d, &pool);
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      save_profile(p, out);
      report.add({"samples", static_cast<std::int64_t>(p.sample_count)});
      report.add({"neurons", static_cast<std::int64_t>(p.means.size())});
      report.add({"dataset_hash", to_hex(p.dataset_hash)});
    } else if (slice->parsed()) {
      require_theta(theta);
      require_file(model, "--model");
      require_file(profile_path, "--profile");
      require_file(data, "--data");
      auto m = load_model(model);
      auto p = load_profile(profile_path, m);
      auto d = load_data(data, m);
      if (d.empty()) throw UsageError("--data holds no samples");
      auto classes = parse_classes(outputs, m.class_count);
      report_dir = out_dir(out);
      Slicer slicer(m, p);
      auto outs = output_neurons(m, classes);
      auto xs = inputs_of(d);
      auto tables = slice_samples(slicer, xs, [&](std::size_t, const RelActTrace&) { return outs; }, theta, &pool);
      for (std::size_t i = 0; i < tables.size(); ++i) save_slice(tables[i], report_dir / sample_file(i));
      auto agg = slice_criterion(slicer, xs, outs, theta, &pool);
      save_slice(agg, report_dir / "aggregate.nnsl");
      auto s = extract_slice(agg);
      report.add({"samples", static_cast<std::int64_t>(d.size())});
      report.add({"slice_neurons", static_cast<std::int64_t>(s.neuron_count())});
      report.add({"slice_synapses", static_cast<std::int64_t>(s.synapse_count())});
      report.add({"model_synapses", static_cast<std::int64_t>(slicer.index().synapse_count())});
    } else if (dtrain->parsed()) {
      require_theta(theta);
      require_file(model, "--model");
      require_file(profile_path, "--profile");
      require_file(data, "--data");
      auto m = load_model(model);
      auto p = load_profile(profile_path, m);
      auto d = load_data(data, m);
      std::vector<Tensor> xs;
      for (std::size_t i = 0; i < std::min(samples, d.size()); ++i) xs.push_back(d.samples[i].input);
      if (xs.empty()) throw UsageError("--data holds no samples");
      report_dir = out_dir(out);
      Slicer slicer(m, p);
      auto t = train_detector(slicer, xs, theta, CartConfig{max_depth, min_leaf}, &pool);
      save_detector(t.detector, report_dir / "detector.nnsd");
      report.add({"samples", static_cast<std::int64_t>(xs.size())});
      report.add({"train_agreement", t.train_agreement});
      report.add({"tree_nodes", static_cast<std::int64_t>(t.detector.tree.size())});
      report.add({"tree_depth", static_cast<std::int64_t>(t.detector.tree.depth())});
    } else if (deval->parsed()) {
      require_file(model, "--model");
      require_file(profile_path, "--profile");
      require_file(detector_path, "--detector");
      require_file(data, "--data");
      auto m = load_model(model);
      auto p = load_profile(profile_path, m);
      auto det = load_detector(detector_path);
      auto d = load_data(data, m);
      report_dir = out_dir(out);
      experiments::DetectionConfig cfg;
      cfg.attacks.clear();
      auto eps_values = parse_list(eps_list, "--eps");
      if (eps_values.empty()) throw UsageError("--eps needs at least one value");
      for (double e : eps_values) {
        if (e < 0) throw UsageError("--eps values must be >= 0");
        std::ostringstream name;
        name << "FGSM_" << e * 256;
        cfg.attacks.push_back({name.str(), false, e});
      }
      double top = *std::max_element(eps_values.begin(), eps_values.end());
      std::ostringstream pname;
      pname << "RPGD_" << top * 256;
      cfg.attacks.push_back({pname.str(), true, top});
      cfg.pgd_iterations = iterations;
      cfg.seed = common.seed;
      auto clean = experiments::correctly_classified(m, d, samples, &pool);
      if (clean.empty()) throw UsageError("no correctly classified samples in --data");
      auto res = experiments::evaluate_detector(m, p, det, clean, cfg, &pool);
      auto table = experiments::detection_table(res);
      write_table(table, report_dir / "detection");
      std::cout << to_csv(table);
      report.add({"clean_samples", static_cast<std::int64_t>(res.clean_count)});
      report.add({"clean_flagged", static_cast<std::int64_t>(res.clean_flagged)});
    } else if (attack->parsed()) {
      require_file(model, "--model");
      require_file(data, "--data");
      if (!(eps >= 0)) throw UsageError("--eps must be >= 0");
      auto m = load_model(model);
      auto d = load_data(data, m);
      report_dir = out_dir(out);
      Network<float> net(m);
      Dataset adv{{}, d.class_count};
      adv.samples.resize(d.size());
      auto one = [&](std::size_t i) {
        const auto& s = d.samples[i];
        if (s.label < 0) throw UsageError("attack needs labelled samples");
        auto label = static_cast<std::size_t>(s.label);
        adv.samples[i] = {attack_kind == "pgd"
                              ? pgd(net, s.input, label, PgdConfig{eps, eps / 4, iterations, common.seed + i})
                              : fgsm(net, s.input, label, eps),
                          s.label};
      };
      pool.parallel_for(d.size(), one);
      save_dataset(adv, report_dir / "adversarial.nnst");
      report.add({"samples", static_cast<std::int64_t>(d.size())});
      report.add({"clean_accuracy", evaluate(m, d, {}, &pool)});
      report.add({"adversarial_accuracy", evaluate(m, adv, {}, &pool)});
    } else if (prune_cmd->parsed()) {
      require_theta(theta);
      require_file(model, "--model");
      require_file(data, "--data");
      auto m = load_model(model);
      auto d = load_data(data, m);
      auto eval_set = test.empty() ? d : (require_file(test, "--test"), load_data(test, m));
      auto targets = parse_classes(outputs, m.class_count);
      auto sel = *parse_mode(mode);
      report_dir = out_dir(out);
      std::optional<ActivationProfile> p;
      std::optional<ContributionTable> table;
      if (sel == SelectionMode::Contribution || !sweep.empty()) {
        require_file(profile_path, "--profile");
        p = load_profile(profile_path, m);
        Slicer slicer(m, *p);
        table = target_contributions(slicer, d, targets, theta, &pool);
        save_slice(*table, report_dir / "criterion.nnsl");
      }
      PruneConfig pc{targets, ratio, static_cast<float>(theta), sel, common.seed};
      auto cut = pruned_synapses(m, table ? &*table : nullptr, pc);
      auto pruned = ratio == 0 ? m : apply_pruning(m, cut);
      report.add({"unpruned_target_accuracy", evaluate(m, eval_set, targets, &pool)});
      report.add({"pruned_target_accuracy", evaluate(pruned, eval_set, targets, &pool)});
      report.add({"pruned_synapses", static_cast<std::int64_t>(cut.size())});
      report.add({"pruned_neurons", static_cast<std::int64_t>(pruned_neurons(pruned).size())});
      if (epochs > 0) {
        pruned = fine_tune(pruned, cut, filter_classes(d, targets), TrainConfig{lr, batch, epochs, common.seed});
        report.add({"finetuned_target_accuracy", evaluate(pruned, eval_set, targets, &pool)});
      }
      save_model(pruned, report_dir / "pruned.nnsm");
      if (!sweep.empty()) {
        auto ratios = parse_list(sweep, "--sweep");
        for (auto r : ratios)
          if (!(r >= 0 && r <= 1)) throw UsageError("--sweep ratios must lie in [0, 1]");
        for (auto sm : {SelectionMode::Contribution, SelectionMode::WeightMagnitude, SelectionMode::Random})
          write_table(experiments::prune_sweep(m, &*table, eval_set, targets, sm, ratios, common.seed, &pool),
                      report_dir / ("sweep_" + std::string(mode_name(sm))));
      }
    } else if (protect->parsed()) {
      require_theta(theta);
      require_file(model, "--model");
      require_file(data, "--data");
      require_file(test, "--test");
      auto m = load_model(model);
      auto d = load_data(data, m);
      auto eval_set = load_data(test, m);
      auto targets = parse_classes(outputs, m.class_count);
      auto sel = *parse_mode(mode);
      report_dir = out_dir(out);
      std::optional<ContributionTable> table;
      if (sel == SelectionMode::Contribution) {
        require_file(profile_path, "--profile");
        auto p = load_profile(profile_path, m);
        Slicer slicer(m, p);
        table = target_contributions(slicer, d, targets, theta, &pool);
      }
      auto hidden = select_protected(m, table ? &*table : nullptr, fraction, sel, common.seed);
      experiments::Fixture f{d, eval_set, m, {}, 0};
      experiments::ProtectionConfig pc;
      pc.budget = budget;
      pc.attacker_has_targets = attacker_has_targets;
      pc.seed = common.seed;
      auto attacker = experiments::attacker_data(f, targets, pc);
      if (attacker.empty()) throw UsageError("attacker data is empty");
      ExtractionConfig ec{TrainConfig{lr, batch, epochs, common.seed}, 0.05f, !train_exposed, common.seed};
      auto r = simulate_extraction(m, hidden, attacker, eval_set, targets, ec, &pool);
      save_model(r.recovered, report_dir / "recovered.nnsm");
      report.add({"hidden_synapses", static_cast<std::int64_t>(hidden.hidden.size())});
      report.add({"original_target_accuracy", evaluate(m, eval_set, targets, &pool)});
      report.add({"original_all_accuracy", evaluate(m, eval_set, {}, &pool)});
      report.add({"recovered_target_accuracy", r.target_accuracy});
      report.add({"recovered_all_accuracy", r.all_accuracy});
      Table pt{{"targets", "mode", "target_accuracy", "all_accuracy"}, {}};
      pt.add({experiments::join_classes(targets), std::string(mode_name(sel)), r.target_accuracy, r.all_accuracy});
      write_table(pt, report_dir / "protection");
    } else if (eval->parsed()) {
      require_file(model, "--model");
      require_file(data, "--data");
      auto m = load_model(model);
      auto d = load_data(data, m);
      std::vector<std::size_t> classes;
      if (!outputs.empty()) classes = parse_classes(outputs, m.class_count);
      if (!out.empty()) report_dir = out_dir(out);
      report.add({"samples", static_cast<std::int64_t>(d.size())});
      report.add({"accuracy", evaluate(m, d, classes, &pool)});
    } else if (oracle->parsed()) {
      if (!out.empty()) report_dir = out_dir(out);
      auto r = run_oracle_suite(common.seed, cases, &pool);
      std::cout << r.summary() << "\n";
      report.add({"cases", static_cast<std::int64_t>(r.cases)});
      report.add({"matches", static_cast<std::int64_t>(r.matches)});
      for (auto i : r.mismatched) std::cerr << "mismatch in case " << i << "\n";
      if (!report_dir.empty()) write_table(report, report_dir / "report");
      return r.matches == r.cases ? 0 : 1;
    }

    if (!report_dir.empty()) write_table(report, report_dir / "report");
    print_metrics(report);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid model: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "invalid file: " << e.what() << "\n";
    return 2;
  } catch (const FingerprintMismatch& e) {
    std::cerr << "mismatch: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 1;
  }
}

/* Copyright 2026 The CTT Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// ctt: train, finetune, attack, eval, certify, sweep.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctt/attacks.hpp"
#include "ctt/checkpoint.hpp"
#include "ctt/data.hpp"
#include "ctt/harness.hpp"
#include "ctt/model.hpp"
#include "ctt/simd.hpp"
#include "ctt/taboo.hpp"

namespace {

using namespace ctt;

void note(const std::string& msg) { std::fprintf(stderr, "[ctt] %s\n", msg.c_str()); }

Dataset load(const std::string& dir, bool train, const IdxFiles& files) {
  const auto root = resolve_data_dir(dir);
  if (!root) {
    throw std::runtime_error(
        "no data directory: pass --data-dir or set CTT_DATA_DIR to a folder holding the MNIST IDX files (" +
        files.train_images + ", " + files.train_labels + ", " + files.test_images + ", " + files.test_labels +
        "), e.g. from the mnist-data npm package or yann.lecun.com/exdb/mnist");
  }
  return load_split(*root, train, files);
}

TabooKey key_or_throw(const Checkpoint& ck, const std::string& path) {
  if (!ck.key) throw std::runtime_error(path + " holds no taboo key; run `ctt finetune` first");
  return *ck.key;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

struct Common {
  std::string data_dir;
  IdxFiles files;
};

void add_data_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--data-dir", c.data_dir, "MNIST IDX directory (default $CTT_DATA_DIR)");
  cmd->add_option("--train-images", c.files.train_images);
  cmd->add_option("--train-labels", c.files.train_labels);
  cmd->add_option("--test-images", c.files.test_images);
  cmd->add_option("--test-labels", c.files.test_labels);
}

struct AttackFlags {
  std::string method = "fgsm";
  std::string norm;
  double eps = -1.0;
  std::size_t steps = 0;
  std::string step_size = "auto";
  bool early_stop = false;
  bool no_random_start = false;
  std::string grad = "analytic";
  double delta = 1e-3;
  double c = 0.1;
  double confidence = 0.1;
  double lr = 0.01;
  std::size_t search = 1;
  double overshoot = 0.02;
  std::size_t trials = 25;
  std::uint64_t seed = 0;

  AttackSpec build() const {
    AttackSpec s = AttackSpec::defaults(parse_method(method));
    if (!norm.empty()) s.norm = parse_norm(norm);
    if (eps >= 0.0) s.epsilon = eps;
    if (steps > 0) s.steps = steps;
    s.step_size = step_size == "auto" ? 0.0 : std::stod(step_size);
    s.early_stop = early_stop;
    if (no_random_start) s.random_start = false;
    if (grad == "estimated") {
      s.gradient = GradientSource::estimated(delta);
    } else if (grad != "analytic") {
      throw std::invalid_argument("--grad must be analytic or estimated");
    }
    s.c = c;
    s.confidence = confidence;
    s.learning_rate = lr;
    s.binary_search_steps = search;
    s.overshoot = overshoot;
    s.trials = trials;
    s.seed = seed;
    s.validate();
    return s;
  }
};

void add_attack_flags(CLI::App* cmd, AttackFlags& a) {
  cmd->add_option("--method", a.method, "fgsm|fgm_l2|bim|l2_bim|pgd|cw_l2|deepfool|boundary");
  cmd->add_option("--norm", a.norm, "linf|l2");
  cmd->add_option("--eps", a.eps, "budget");
  cmd->add_option("--steps", a.steps, "iterations");
  cmd->add_option("--step-size", a.step_size, "number or auto (eps/steps)");
  cmd->add_flag("--early-stop", a.early_stop, "stop at the first misclassification");
  cmd->add_flag("--no-random-start", a.no_random_start);
  cmd->add_option("--grad", a.grad, "analytic|estimated");
  cmd->add_option("--delta", a.delta, "finite-difference step for --grad estimated");
  cmd->add_option("--c", a.c, "cw_l2 constant");
  cmd->add_option("--confidence", a.confidence);
  cmd->add_option("--attack-lr", a.lr, "cw_l2 learning rate");
  cmd->add_option("--search-steps", a.search, "cw_l2 binary search steps");
  cmd->add_option("--overshoot", a.overshoot);
  cmd->add_option("--trials", a.trials, "boundary candidates per iteration");
  cmd->add_option("--attack-seed", a.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certifiable taboo trap: training, fine-tuning, attacks and evaluation"};
  app.set_config("--config", "", "key = value config file");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version_string()));

  RunConfig cfg;
  Common common;
  std::string out, ckpt;

  auto* train = app.add_subcommand("train", "train the baseline classifier");
  add_data_flags(train, common);
  train->add_option("--arch", cfg.arch, "lenet5|tiny");
  train->add_option("--epochs", cfg.train.epochs);
  train->add_option("--batch", cfg.train.batch_size);
  train->add_option("--lr", cfg.train.lr);
  train->add_option("--seed", cfg.train.seed);
  train->add_option("--out", out)->required();

  std::size_t ft_epochs = cfg.finetune_epochs;
  std::string mode = "loose";
  auto* ft = app.add_subcommand("finetune", "fit a taboo key into a trained model");
  add_data_flags(ft, common);
  ft->add_option("--ckpt", ckpt)->required();
  ft->add_option("--mode", mode, "lite|loose|strict");
  ft->add_option("--epsilon", cfg.epsilon);
  ft->add_option("--beta", cfg.beta, "mask density");
  ft->add_option("--threshold", cfg.threshold);
  ft->add_option("--warm-epochs", cfg.schedule.warm_epochs);
  ft->add_option("--alpha-inc", cfg.schedule.alpha_increment);
  ft->add_option("--alpha-period", cfg.schedule.period);
  ft->add_option("--alpha-max", cfg.schedule.alpha_max);
  ft->add_option("--cert-weight", cfg.schedule.fixed_certification, "fixed L_C weight (default: follow alpha)");
  ft->add_option("--settle-epochs", cfg.settle_epochs, "final epochs at a reduced learning rate");
  ft->add_option("--settle-lr-scale", cfg.settle_lr_scale);
  ft->add_option("--epochs", ft_epochs);
  ft->add_option("--batch", cfg.train.batch_size);
  ft->add_option("--lr", cfg.train.lr);
  ft->add_option("--seed", cfg.finetune_seed);
  ft->add_option("--key-seed", cfg.key_seed);
  ft->add_option("--out", out)->required();

  AttackFlags af;
  auto* attack = app.add_subcommand("attack", "generate adversarial examples");
  add_data_flags(attack, common);
  add_attack_flags(attack, af);
  attack->add_option("--ckpt", ckpt)->required();
  attack->add_option("--n", cfg.n, "test subsample size");
  attack->add_flag("--full", cfg.full, "attack the whole test split");
  attack->add_option("--sample-seed", cfg.sample_seed);
  attack->add_option("--out", out)->required();

  std::vector<std::string> advs;
  std::string format = "json";
  bool standard = false;
  auto* eval = app.add_subcommand("eval", "detection report over clean and adversarial inputs");
  add_data_flags(eval, common);
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--advs", advs, "adversarial batches from `ctt attack`");
  eval->add_flag("--standard-attacks", standard, "generate FGSM 0.1/0.2, PGD 0.1 and CW c=0.1 on the fly");
  eval->add_option("--n", cfg.n);
  eval->add_flag("--full", cfg.full);
  eval->add_option("--sample-seed", cfg.sample_seed);
  eval->add_option("--min-hits", cfg.min_hits);
  eval->add_option("--format", format, "json|csv");
  eval->add_option("--out", out)->required();

  std::string split = "train";
  auto* cert = app.add_subcommand("certify", "per-neuron certification margins");
  add_data_flags(cert, common);
  cert->add_option("--ckpt", ckpt)->required();
  cert->add_option("--epsilon", cfg.epsilon);
  cert->add_option("--split", split, "train|test");
  cert->add_option("--out", out);

  std::string variable = "epsilon", grid = "1e-5:1e-1:log9";
  auto* sweep = app.add_subcommand("sweep", "epsilon or false-positive trade-off sweep");
  add_data_flags(sweep, common);
  sweep->add_option("--ckpt", ckpt, "baseline checkpoint")->required();
  sweep->add_option("--variable", variable, "epsilon|false_positive");
  sweep->add_option("--grid", grid, "a:b:logN, a:b:linN or a comma list (epochs for false_positive)");
  sweep->add_option("--mode", mode);
  sweep->add_option("--epsilon", cfg.epsilon);
  sweep->add_option("--beta", cfg.beta);
  sweep->add_option("--threshold", cfg.threshold);
  sweep->add_option("--warm-epochs", cfg.schedule.warm_epochs);
  sweep->add_option("--alpha-inc", cfg.schedule.alpha_increment);
  sweep->add_option("--alpha-period", cfg.schedule.period);
  sweep->add_option("--alpha-max", cfg.schedule.alpha_max);
  sweep->add_option("--cert-weight", cfg.schedule.fixed_certification, "fixed L_C weight (default: follow alpha)");
  sweep->add_option("--settle-epochs", cfg.settle_epochs, "final epochs at a reduced learning rate");
  sweep->add_option("--settle-lr-scale", cfg.settle_lr_scale);
  sweep->add_option("--epochs", ft_epochs);
  sweep->add_option("--lr", cfg.train.lr);
  sweep->add_option("--seed", cfg.finetune_seed);
  sweep->add_option("--key-seed", cfg.key_seed);
  sweep->add_option("--n", cfg.n);
  sweep->add_option("--sample-seed", cfg.sample_seed);
  sweep->add_option("--format", format);
  sweep->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.data_dir = common.data_dir;
    cfg.files = common.files;
    cfg.finetune_epochs = ft_epochs;
    cfg.mode = parse_mode(mode);
    note(std::string("kernels: ") + simd::active().name + ", version " + version_string());

    if (*train) {
      const Dataset tr = load(cfg.data_dir, true, cfg.files);
      const Dataset te = load(cfg.data_dir, false, cfg.files);
      const TrainResult res = train_baseline(ModelSpec::preset(cfg.arch), tr, cfg.train, &te, [](const EpochStats& s) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %zu loss %.4f train %.4f test %.4f (%.1fs)", s.epoch + 1, s.mean_loss,
                      s.train_accuracy, s.test_accuracy, s.seconds);
        note(buf);
      });
      save_checkpoint(out, res.net, nullptr,
                      {{"stage", "baseline"},
                       {"config", cfg.to_json()},
                       {"test_accuracy", res.test_accuracy},
                       {"seconds", res.seconds},
                       {"version", version_string()}});
      note("wrote " + out);
      return 0;
    }

    if (*ft) {
      const Checkpoint base = load_checkpoint(ckpt);
      const Dataset tr = load(cfg.data_dir, true, cfg.files);
      TabooKey key = generate_key(base.net.spec, cfg.beta, cfg.key_seed, cfg.threshold);
      char buf[200];
      std::snprintf(buf, sizeof buf, "key: %zu masked neurons (%.4f%% of post-ReLU)", key.instrumented(),
                    100.0 * key.instrumented_fraction(base.net.spec));
      note(buf);
      Network net = base.net;
      nlohmann::json info = {{"stage", "finetune"}, {"config", cfg.to_json()}, {"version", version_string()}};
      if (cfg.mode == CttMode::lite) {
        key = calibrate_lite(net, key, tr);
        info["status"] = "calibrated";
      } else {
        const FinetuneResult res =
            finetune(net, key, tr, cfg.finetune_config(), [](const FinetuneEpoch& e, const Network&) {
              char line[240];
              std::snprintf(line, sizeof line,
                            "epoch %zu alpha %.4f ce %.4f L_D %.4f L_C %.4f acc %.4f alarms %.4f (%.1fs)",
                            e.epoch + 1, e.alpha, e.cross_entropy, e.detection_loss, e.certification_loss,
                            e.train_accuracy, e.train_alarm_rate, e.seconds);
              note(line);
              return true;
            });
        net = res.net;
        note(res.status);
        info["status"] = res.status;
        info["converged"] = res.converged;
        info["seconds"] = res.seconds;
      }
      save_checkpoint(out, net, &key, info);
      note("wrote " + out);
      return 0;
    }

    if (*attack) {
      const Checkpoint ck = load_checkpoint(ckpt);
      const Dataset te = load(cfg.data_dir, false, cfg.files);
      const AttackSpec spec = af.build();
      const auto indices = sample_indices(te.size(), cfg.full ? te.size() : cfg.n, cfg.sample_seed);
      note("attack " + spec.label() + " on " + std::to_string(indices.size()) + " test images");
      const AdversarialBatch batch = attack_dataset(ck.net, te, indices, spec, [](std::size_t d, std::size_t t) {
        if (d % 100 == 0 || d == t) note(std::to_string(d) + "/" + std::to_string(t));
      });
      save_adversarial_batch(out, batch);
      note("wrote " + out);
      return 0;
    }

    if (*eval) {
      const Checkpoint ck = load_checkpoint(ckpt);
      const TabooKey key = key_or_throw(ck, ckpt);
      const Dataset te = load(cfg.data_dir, false, cfg.files);
      std::vector<AdversarialBatch> batches;
      for (const auto& a : advs) batches.push_back(load_adversarial_batch(a));
      if (standard) cfg.attacks = standard_attacks();
      if (batches.empty() && cfg.attacks.empty()) note("no --advs or --standard-attacks: clean row only");
      const DetectionReport report = run_evaluation(cfg, ck.net, key, te, batches, note);
      emit_report(report, parse_format(format), out);
      note("wrote " + out);
      return 0;
    }

    if (*cert) {
      const Checkpoint ck = load_checkpoint(ckpt);
      const TabooKey key = key_or_throw(ck, ckpt);
      const Dataset data = load(cfg.data_dir, split == "train", cfg.files);
      const CertificationResult res = certify(ck.net, key, data, cfg.epsilon);
      write_json(out, to_json(res));
      return 0;
    }

    if (*sweep) {
      const Checkpoint base = load_checkpoint(ckpt);
      const Dataset tr = load(cfg.data_dir, true, cfg.files);
      const Dataset te = load(cfg.data_dir, false, cfg.files);
      if (cfg.attacks.empty()) {
        cfg.attacks = standard_attacks();
        cfg.attacks.pop_back();  // CW is too slow to repeat per grid point
      }
      const SweepReport report =
          run_sweep(cfg, base.net, tr, te, parse_sweep_variable(variable), parse_grid(grid), note);
      emit_report(report, parse_format(format), out);
      note("wrote " + out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ctt: error: %s\n", e.what());
    return 1;
  }
  return 0;
}

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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Expensive artifacts (trained checkpoints,
// reports) are cached in $CTT_ACCEPTANCE_CACHE, keyed by their configuration,
// together with the wall time it took to produce them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctt/attacks.hpp"
#include "ctt/checkpoint.hpp"
#include "ctt/harness.hpp"
#include "reference.hpp"

using namespace ctt;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void note(const std::string& msg) { std::fprintf(stderr, "[acceptance] %s\n", msg.c_str()); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path cache;
  std::optional<fs::path> data_dir;
  std::optional<Dataset> train, test;
  std::optional<Network> baseline;
  json baseline_info;

  const Dataset& train_set() {
    if (!train) train = load_split(*data_dir, true);
    return *train;
  }
  const Dataset& test_set() {
    if (!test) test = load_split(*data_dir, false);
    return *test;
  }
};

// ---- cache helpers -------------------------------------------------------

std::optional<json> read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2) << "\n";
}

// Loads a cached checkpoint whose info["config"] equals `config`.
std::optional<Checkpoint> cached_checkpoint(const fs::path& p, const json& config) {
  if (!fs::exists(p)) return std::nullopt;
  try {
    Checkpoint c = load_checkpoint(p);
    if (c.info.value("config", json()) == config) return c;
  } catch (const std::exception& e) {
    note("ignoring unreadable cache entry " + p.string() + ": " + e.what());
  }
  return std::nullopt;
}

std::optional<json> cached_report(const fs::path& p, const json& config) {
  auto j = read_json(p);
  if (j && j->value("config", json()) == config) return j;
  return std::nullopt;
}

char buf[512];
template <typename... A>
std::string fmt(const char* f, A... a) {
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

// ---- configuration -------------------------------------------------------

TrainConfig baseline_config() {
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 64;
  c.lr = 1e-3;
  c.seed = 1;
  return c;
}

// Two chained fine-tunes from the baseline. The first pulls the keyed neurons to the
// threshold with equal L_D and L_C weights; the second trades L_C down to 0.03 at a
// lower rate and settles at lr 1e-5 so the biases stop hovering around T.
RunConfig loose_stage(int stage) {
  RunConfig c;
  c.train = baseline_config();
  c.mode = CttMode::loose;
  c.epsilon = 3e-3;
  c.beta = 0.0009;
  c.threshold = 1e-4f;
  c.key_seed = 7;
  c.n = 1000;
  c.sample_seed = 2026;
  c.attacks = standard_attacks(0);
  if (stage == 1) {
    c.schedule = AnnealSchedule{0, 0.3, 1, 0.3};
    c.finetune_epochs = 3;
    c.finetune_seed = 11;
  } else {
    c.train.lr = 1e-4;
    c.schedule = AnnealSchedule{0, 1.0, 1, 1.0};
    c.schedule.fixed_certification = 0.03;
    c.finetune_epochs = 8;
    c.settle_epochs = 2;
    c.settle_lr_scale = 0.1;
    c.finetune_seed = 12;
  }
  return c;
}

// Sweeps use the first stage alone, without CW.
RunConfig sweep_config() {
  RunConfig c = loose_stage(1);
  c.finetune_epochs = 2;
  c.attacks.pop_back();
  return c;
}

const char* kEpsilonGrid = "1e-5:1e-1:log5";
const char* kSnapshotGrid = "1,2,3,4,5";

// ---- criterion 1 ---------------------------------------------------------

Outcome baseline(Context& ctx) {
  const TrainConfig cfg = baseline_config();
  const json config = {{"arch", "lenet5"}, {"epochs", cfg.epochs}, {"batch", cfg.batch_size}, {"lr", cfg.lr},
                       {"seed", cfg.seed}};
  const fs::path path = ctx.cache / "baseline.ckpt";
  if (auto c = cached_checkpoint(path, config)) {
    note("reusing cached baseline " + path.string());
    ctx.baseline = c->net;
    ctx.baseline_info = c->info;
  } else {
    note("training LeNet5 baseline for 20 epochs");
    const TrainResult r = train_baseline(ModelSpec::lenet5(), ctx.train_set(), cfg, &ctx.test_set(), [](const EpochStats& s) {
      note(fmt("epoch %zu loss %.4f test %.4f (%.1fs)", s.epoch + 1, s.mean_loss, s.test_accuracy, s.seconds));
    });
    ctx.baseline = r.net;
    ctx.baseline_info = {{"config", config}, {"seconds", r.seconds}, {"test_accuracy", r.test_accuracy}};
    save_checkpoint(path, r.net, nullptr, ctx.baseline_info);
  }
  const double acc = accuracy(*ctx.baseline, ctx.test_set());
  const double seconds = ctx.baseline_info["seconds"].get<double>();
  return {acc >= 0.98 && seconds <= 1800.0,
          fmt("test accuracy %.4f (>= 0.98), training time %.0fs (<= 1800s)", acc, seconds)};
}

// ---- criterion 2 ---------------------------------------------------------

Outcome loose_reproduction(Context& ctx) {
  const RunConfig stages[] = {loose_stage(1), loose_stage(2)};
  const json config = {{"stage1", stages[0].to_json()}, {"stage2", stages[1].to_json()}};
  const RunConfig& cfg = stages[1];
  const Network& base = *ctx.baseline;
  const TabooKey key = generate_key(base.spec, cfg.beta, cfg.key_seed, cfg.threshold);

  const fs::path ckpt = ctx.cache / "ctt_loose.ckpt";
  Network net;
  double finetune_seconds = 0.0;
  if (auto c = cached_checkpoint(ckpt, config)) {
    note("reusing cached CTT-loose model " + ckpt.string());
    net = c->net;
    finetune_seconds = c->info["seconds"].get<double>();
  } else {
    note(fmt("fine-tuning CTT-loose, %zu masked neurons (%.4f%%)", key.instrumented(),
             100.0 * key.instrumented_fraction(base.spec)));
    net = base;
    json status = json::array();
    for (const RunConfig& stage : stages) {
      const FinetuneResult r = finetune(net, key, ctx.train_set(), stage.finetune_config(),
                                        [](const FinetuneEpoch& e, const Network&) {
                                          note(fmt("epoch %zu alpha %.3f ce %.4f L_D %.4f L_C %.5f alarms %.4f (%.0fs)",
                                                   e.epoch + 1, e.alpha, e.cross_entropy, e.detection_loss,
                                                   e.certification_loss, e.train_alarm_rate, e.seconds));
                                          return true;
                                        });
      note(r.status);
      status.push_back(r.status);
      net = r.net;
      finetune_seconds += r.seconds;
    }
    save_checkpoint(ckpt, net, &key, {{"config", config}, {"seconds", finetune_seconds}, {"status", status}});
  }

  const fs::path rpath = ctx.cache / "ctt_loose_report.json";
  json report;
  if (auto j = cached_report(rpath, config)) {
    report = *j;
  } else {
    const auto t0 = Clock::now();
    const DetectionReport rep = run_evaluation(cfg, net, key, ctx.test_set(), {}, note);
    report = to_json(rep);
    report["config"] = config;
    report["eval_seconds"] = since(t0);
    write_json(rpath, report);
  }

  const double total = finetune_seconds + report["eval_seconds"].get<double>();
  const json& rows = report["rows"];
  const double clean = rows[0]["clean_accuracy"].get<double>();
  const double fp = rows[0]["false_positive_rate"].get<double>();
  bool ok = clean >= 0.975 && fp <= 0.05 && total <= 7200.0;
  std::string detail = fmt("clean %.4f (>= 0.975), FP %.4f (<= 0.05)", clean, fp);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double det = rows[i]["detection_rate"].is_number() ? rows[i]["detection_rate"].get<double>() : 0.0;
    const bool cw = rows[i]["params"].value("method", "") == "cw_l2";
    const double need = cw ? 0.75 : 0.90;
    ok = ok && det >= need;
    detail += fmt(", %s %.4f (>= %.2f)", rows[i]["attack"].get<std::string>().c_str(), det, need);
  }
  detail += fmt(", runtime %.0fs (<= 7200s)", total);
  return {ok, detail};
}

// ---- criterion 3 ---------------------------------------------------------

Outcome lite_zero_fp(Context& ctx) {
  const Network& net = *ctx.baseline;
  const Dataset& train = ctx.train_set();
  const TabooKey key = calibrate_lite(net, generate_key(net.spec, 0.001, 7), train);
  std::size_t alarms = 0;
  for (std::size_t i = 0; i < train.size(); ++i) alarms += detect(net, key, train.image(i)).malicious ? 1 : 0;
  return {alarms == 0, fmt("%zu alarms over %zu training images (== 0)", alarms, train.size())};
}

// ---- criterion 4 ---------------------------------------------------------

ModelSpec random_small_spec(Rng& rng) {
  const std::size_t c1 = 1 + rng.below(3), c2 = 1 + rng.below(4), hidden = 3 + rng.below(6);
  const std::size_t classes = 2 + rng.below(4);
  ModelSpec s;
  s.name = "random";
  s.input_shape = {1 + rng.below(2), 8, 8};
  s.layers = {LayerSpec::conv(s.input_shape[0], c1, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(),
              LayerSpec::conv(c1, c2, 3), LayerSpec::relu(), LayerSpec::fc(c2 * 4, hidden), LayerSpec::relu(),
              LayerSpec::fc(hidden, classes)};
  return s;
}

Outcome interval_soundness() {
  Rng rng(404);
  std::size_t escaped = 0, samples = 0;
  for (int n = 0; n < 20; ++n) {
    const ModelSpec spec = random_small_spec(rng);
    const Network net = ref::random_network(spec, 1000 + static_cast<std::uint64_t>(n), 1.0 + rng.uniform());
    for (int b = 0; b < 20; ++b) {
      Tensor lo(spec.input_shape), hi(spec.input_shape);
      const double width = rng.uniform(0.001, 0.3);
      for (std::size_t i = 0; i < lo.size(); ++i) {
        const double c = rng.uniform(), w = rng.uniform(0.0, width);
        lo[i] = static_cast<float>(c - w);
        hi[i] = static_cast<float>(c + w);
      }
      const IntervalTensor box(lo, hi);
      const BoundSet bs = propagate_bounds(net, box);
      for (int s = 0; s < 10000; ++s) {
        Tensor x(spec.input_shape);
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double u = rng.uniform();
          const double t = u < 0.1 ? 0.0 : (u > 0.9 ? 1.0 : rng.uniform());
          x[i] = static_cast<float>(lo[i] + t * (static_cast<double>(hi[i]) - lo[i]));
        }
        const ForwardPass fp = forward_with_cache(net, x);
        bool inside = true;
        for (std::size_t l = 0; l < bs.layers.size() && inside; ++l) inside = bs.layers[l].contains(fp.activations[l], 1e-4f);
        escaped += inside ? 0 : 1;
        ++samples;
      }
    }
  }

  // single affine layers against every corner of the box
  double worst = 0.0;
  for (int n = 0; n < 20; ++n) {
    ModelSpec spec;
    spec.name = "affine";
    const bool conv = n % 2 == 0;
    if (conv) {
      spec.input_shape = {1, 3, 3};
      spec.layers = {LayerSpec::conv(1, 2, 2), LayerSpec::fc(8, 2)};
    } else {
      spec.input_shape = {1, 1, 10};
      spec.layers = {LayerSpec::fc(10, 4)};
    }
    const Network net = ref::random_network(spec, 2000 + static_cast<std::uint64_t>(n));
    const ref::Net oracle(spec, ref::from(net.params));
    Tensor lo(spec.input_shape), hi(spec.input_shape);
    for (std::size_t i = 0; i < lo.size(); ++i) {
      lo[i] = static_cast<float>(rng.uniform(-1.0, 0.5));
      hi[i] = static_cast<float>(lo[i] + rng.uniform(0.0, 0.5));
    }
    const IntervalTensor got = propagate_bounds(net, IntervalTensor(lo, hi)).layers[0];
    const std::size_t dim = lo.size();
    ref::Vec mn(got.size(), 1e300), mx(got.size(), -1e300);
    for (std::size_t mask = 0; mask < (std::size_t{1} << dim); ++mask) {
      ref::Vec x(dim);
      for (std::size_t i = 0; i < dim; ++i) x[i] = (mask >> i) & 1 ? hi[i] : lo[i];
      const ref::Vec y = oracle.forward(x)[0];
      for (std::size_t k = 0; k < y.size(); ++k) {
        mn[k] = std::min(mn[k], y[k]);
        mx[k] = std::max(mx[k], y[k]);
      }
    }
    for (std::size_t k = 0; k < got.size(); ++k) {
      worst = std::max({worst, std::fabs(got.lower[k] - mn[k]), std::fabs(got.upper[k] - mx[k])});
    }
  }
  return {escaped == 0 && worst <= 1e-6,
          fmt("%zu of %zu samples escaped (== 0); corner enumeration max error %.2e (<= 1e-6)", escaped, samples,
              worst)};
}

// ---- criterion 5 ---------------------------------------------------------

struct FdTally {
  std::size_t checked = 0;
  double worst = 0.0;
};

Outcome gradient_fidelity() {
  const ModelSpec spec = ModelSpec::lenet5();
  const Network net = ref::random_network(spec, 55);
  const TabooKey key = generate_key(spec, 0.05, 3, 0.05f);
  Rng rng(77);
  Tensor x = ref::random_input(spec.input_shape, rng);
  const std::uint32_t y = 3;
  const double eps = 0.02;

  ref::Net oracle(spec, ref::from(net.params));
  ref::Vec xv = ref::from(x);
  enum Which { kCe, kDetection, kLoose, kStrict };
  const char* names[] = {"CE", "L_D", "L_LC", "L_SC"};
  auto value = [&](Which w, ref::Signature* sig) {
    const ref::Losses L = ref::ctt_losses(oracle, key, xv, y, eps, w >= kLoose, sig);
    switch (w) {
      case kCe: return L.ce;
      case kDetection: return L.detection;
      case kLoose: return L.loose;
      default: return L.strict;
    }
  };

  std::string detail;
  bool ok = true;
  const double h = 1e-4;
  for (Which w : {kCe, kDetection, kLoose, kStrict}) {
    const CttMode mode = w == kStrict ? CttMode::strict : CttMode::loose;
    const float wce = w == kCe ? 1.0f : 0.0f, wd = w == kDetection ? 1.0f : 0.0f;
    const float wc = w >= kLoose ? 1.0f : 0.0f;
    const SampleObjective so = sample_objective(net, key, x, y, mode, eps, wce, wd, wc, {}, nullptr, true);

    ref::Signature base;
    const double v0 = value(w, &base);
    auto fd = [&](double& slot) -> std::optional<double> {
      const double keep = slot;
      ref::Signature sp, sm;
      slot = keep + h;
      const double fp = value(w, &sp);
      slot = keep - h;
      const double fm = value(w, &sm);
      slot = keep;
      if (!(sp == base) || !(sm == base)) return std::nullopt;
      return (fp - fm) / (2 * h);
    };

    // parameters: random coordinates across every layer until 100 are kink-free
    FdTally params;
    std::vector<std::pair<std::size_t, bool>> slots;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      if (spec.layers[l].has_parameters()) {
        slots.emplace_back(l, true);
        slots.emplace_back(l, false);
      }
    }
    for (int attempt = 0; attempt < 5000 && params.checked < 100; ++attempt) {
      const auto [l, is_w] = slots[rng.below(slots.size())];
      auto& vec = is_w ? oracle.params().w[l] : oracle.params().b[l];
      const std::size_t i = rng.below(vec.size());
      const auto n = fd(vec[i]);
      if (!n) continue;
      const float a = is_w ? so.grads.weights[l][i] : so.grads.biases[l][i];
      if (a == 0.0f && *n == 0.0) continue;  // untouched coordinate, not informative
      params.worst = std::max(params.worst, ref::relative_error(a, *n, 1e-3));
      ++params.checked;
    }

    // inputs: the box losses chain through the clipped epsilon box
    FdTally inputs;
    for (int attempt = 0; attempt < 5000 && inputs.checked < 100; ++attempt) {
      const std::size_t i = rng.below(xv.size());
      const auto n = fd(xv[i]);
      if (!n) continue;
      if (so.grads.input[i] == 0.0f && *n == 0.0) continue;
      inputs.worst = std::max(inputs.worst, ref::relative_error(so.grads.input[i], *n, 1e-3));
      ++inputs.checked;
    }

    const bool this_ok = v0 > 0.0 && params.checked >= 100 && params.worst <= 1e-2 && inputs.checked >= 100 &&
                         inputs.worst <= 1e-2;
    ok = ok && this_ok;
    detail += fmt("%s%s params %zu@%.1e inputs %zu@%.1e", detail.empty() ? "" : "; ", names[w], params.checked,
                  params.worst, inputs.checked, inputs.worst);
  }
  return {ok, detail + " (>= 100 coordinates each, relative error <= 1e-2)"};
}

// ---- criterion 6 ---------------------------------------------------------

Outcome attack_norms(Context& ctx) {
  const Network& net = *ctx.baseline;
  const Dataset& test = ctx.test_set();
  const std::vector<std::size_t> idx = sample_indices(test.size(), 1000, 66);

  std::vector<AttackSpec> roster;
  auto add = [&](AttackMethod m, double eps, std::size_t steps) {
    AttackSpec s = AttackSpec::defaults(m);
    s.epsilon = eps;
    if (steps) s.steps = steps;
    s.seed = 5;
    roster.push_back(s);
  };
  add(AttackMethod::fgsm, 0.1, 0);
  add(AttackMethod::fgm_l2, 1.5, 0);
  add(AttackMethod::bim, 0.1, 10);
  add(AttackMethod::l2_bim, 1.5, 10);
  add(AttackMethod::pgd, 0.1, 10);
  add(AttackMethod::deepfool, 0.15, 50);
  add(AttackMethod::cw_l2, 0.0, 100);
  add(AttackMethod::boundary, 0.0, 20);

  bool ok = true;
  std::string detail;
  for (const AttackSpec& s : roster) {
    const auto t0 = Clock::now();
    const AdversarialBatch b = attack_dataset(net, test, idx, s);
    std::size_t bad = 0;
    for (const AdvExample& ex : b.examples) {
      bool good = true;
      for (float v : ex.perturbed.values()) good = good && v >= 0.0f && v <= 1.0f;
      if (s.epsilon > 0.0) {
        const bool l2 = s.method == AttackMethod::fgm_l2 || s.method == AttackMethod::l2_bim ||
                        (s.method == AttackMethod::deepfool && s.norm == Norm::l2);
        good = good && (l2 ? l2_distance(ex.perturbed, ex.original) : linf_distance(ex.perturbed, ex.original)) <= s.epsilon;
      }
      bad += good ? 0 : 1;
    }
    ok = ok && bad == 0 && b.examples.size() >= 1000;
    detail += fmt("%s%s %zu/%zu", detail.empty() ? "" : ", ", method_name(s.method), b.examples.size() - bad,
                  b.examples.size());
    note(fmt("%s done in %.0fs", s.label().c_str(), since(t0)));
  }
  return {ok, detail + " within budget and [0,1]"};
}

// ---- criterion 7 ---------------------------------------------------------

// Mean detection over the sweep attacks, per grid value, in grid order.
std::vector<std::pair<double, double>> mean_detection(const json& rows) {
  std::map<double, std::pair<double, int>> acc;
  std::vector<double> order;
  for (const auto& r : rows) {
    const double v = r["value"].get<double>();
    if (!acc.count(v)) order.push_back(v);
    const double d = r["detection_rate"].is_number() ? r["detection_rate"].get<double>() : 0.0;
    acc[v].first += d;
    acc[v].second += 1;
  }
  std::vector<std::pair<double, double>> out;
  for (double v : order) out.emplace_back(v, acc[v].first / acc[v].second);
  return out;
}

json sweep(Context& ctx, SweepVariable var, const char* grid, const char* file) {
  const RunConfig cfg = sweep_config();
  json config = cfg.to_json();
  config["grid"] = grid;
  config["variable"] = var == SweepVariable::epsilon ? "epsilon" : "false_positive";
  const fs::path p = ctx.cache / file;
  if (auto j = cached_report(p, config)) return *j;
  const auto t0 = Clock::now();
  json j = to_json(run_sweep(cfg, *ctx.baseline, ctx.train_set(), ctx.test_set(), var, parse_grid(grid), note));
  j["config"] = config;
  j["seconds"] = since(t0);
  write_json(p, j);
  return j;
}

Outcome sweep_shapes(Context& ctx) {
  const json eps = sweep(ctx, SweepVariable::epsilon, kEpsilonGrid, "sweep_epsilon.json");
  const auto ed = mean_detection(eps["rows"]);
  double interior = -1.0;
  for (std::size_t i = 1; i + 1 < ed.size(); ++i) interior = std::max(interior, ed[i].second);
  const bool eps_ok = ed.size() >= 5 && interior > ed.front().second && interior > ed.back().second;
  std::string detail = "epsilon sweep detection";
  for (const auto& [v, d] : ed) detail += fmt(" %.0e:%.3f", v, d);
  detail += eps_ok ? " (interior maximum)" : " (no interior maximum)";

  const json fp = sweep(ctx, SweepVariable::false_positive, kSnapshotGrid, "sweep_fp.json");
  std::vector<std::pair<double, double>> pts;  // (FP, detection) per snapshot
  const auto fd = mean_detection(fp["rows"]);
  for (const auto& [v, d] : fd) {
    for (const auto& r : fp["rows"]) {
      if (r["value"].get<double>() == v) {
        pts.emplace_back(r["false_positive_rate"].get<double>(), d);
        break;
      }
    }
  }
  std::sort(pts.begin(), pts.end());
  bool mono = pts.size() >= 4;
  for (std::size_t i = 1; i < pts.size(); ++i) mono = mono && pts[i].second >= pts[i - 1].second;
  detail += "; FP sweep (fp, detection)";
  for (const auto& [f, d] : pts) detail += fmt(" (%.3f, %.3f)", f, d);
  detail += mono ? " nondecreasing" : " not monotone";
  return {eps_ok && mono, detail};
}

// ---- criterion 8 ---------------------------------------------------------

Outcome boundary_monotone(Context& ctx) {
  const Network& net = *ctx.baseline;
  const Dataset& test = ctx.test_set();
  const auto idx = sample_indices(test.size(), 60, 88);
  std::size_t tested = 0, worse = 0;
  double sum50 = 0.0, sum500 = 0.0;
  for (std::size_t i : idx) {
    if (tested == 20) break;
    const Tensor x = test.image(i);
    if (predict(net, x) != test.labels[i]) continue;
    AttackSpec s = AttackSpec::defaults(AttackMethod::boundary);
    s.epsilon = 0.0;
    s.seed = 31;
    s.steps = 50;
    const AdvExample a = run_attack(net, x, test.labels[i], s, i);
    s.steps = 500;
    const AdvExample b = run_attack(net, x, test.labels[i], s, i);
    if (!a.success || !b.success) continue;
    ++tested;
    sum50 += a.l2;
    sum500 += b.l2;
    if (b.l2 > a.l2) ++worse;
  }
  return {tested == 20 && worse == 0,
          fmt("%zu samples, l2@500 > l2@50 on %zu; mean l2 %.3f -> %.3f", tested, worse,
              tested ? sum50 / tested : 0.0, tested ? sum500 / tested : 0.0)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CTT acceptance run"};
  std::string cache = std::getenv("CTT_ACCEPTANCE_CACHE") ? std::getenv("CTT_ACCEPTANCE_CACHE") : "acceptance_cache";
  std::vector<int> only;
  app.add_option("--cache", cache, "directory for cached artifacts");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.cache = cache;
  fs::create_directories(ctx.cache);
  ctx.data_dir = resolve_data_dir("");
  const bool have_data = ctx.data_dir && fs::exists(*ctx.data_dir / IdxFiles{}.train_images);
  if (!have_data) note("MNIST not found; set CTT_DATA_DIR");

  struct Criterion {
    int id;
    const char* name;
    bool needs_data;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "baseline LeNet5", true, [&] { return baseline(ctx); }},
      {2, "CTT-loose reproduction", true, [&] { return loose_reproduction(ctx); }},
      {3, "CTT-lite zero training alarms", true, [&] { return lite_zero_fp(ctx); }},
      {4, "interval soundness", false, [] { return interval_soundness(); }},
      {5, "gradient fidelity", false, [] { return gradient_fidelity(); }},
      {6, "attack norm invariants", true, [&] { return attack_norms(ctx); }},
      {7, "sweep shapes", true, [&] { return sweep_shapes(ctx); }},
      {8, "boundary monotonicity", true, [&] { return boundary_monotone(ctx); }},
  };

  int failures = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      if (c.needs_data && !have_data) {
        o = {false, "MNIST data unavailable"};
      } else {
        if (c.needs_data && c.id != 1 && !ctx.baseline) baseline(ctx);
        o = c.run();
      }
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("CRITERION %d %s: %s  [%s, %.0fs]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                since(t0));
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}

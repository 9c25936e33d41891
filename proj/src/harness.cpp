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

#include "ctt/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctt/rng.hpp"

#ifndef CTT_VERSION
#define CTT_VERSION "unknown"
#endif

namespace ctt {

namespace {

std::string fmt4(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt4(const std::optional<double>& v) { return v ? fmt4(*v) : std::string(); }

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

const char* variable_name(SweepVariable v) { return v == SweepVariable::epsilon ? "epsilon" : "false_positive"; }

}  // namespace

const char* version_string() { return CTT_VERSION; }

nlohmann::json RunConfig::to_json() const {
  nlohmann::json attacks_json = nlohmann::json::array();
  for (const auto& a : attacks) attacks_json.push_back(ctt::to_json(a));
  return {{"data_dir", data_dir},
          {"arch", arch},
          {"train", {{"epochs", train.epochs}, {"batch", train.batch_size}, {"lr", train.lr}, {"seed", train.seed}}},
          {"mode", mode_name(mode)},
          {"epsilon", epsilon},
          {"beta", beta},
          {"threshold", threshold},
          {"warm_epochs", schedule.warm_epochs},
          {"alpha_increment", schedule.alpha_increment},
          {"alpha_period", schedule.period},
          {"alpha_max", schedule.alpha_max},
          {"fixed_certification", schedule.fixed_certification},
          {"finetune_epochs", finetune_epochs},
          {"settle_epochs", settle_epochs},
          {"settle_lr_scale", settle_lr_scale},
          {"key_seed", key_seed},
          {"finetune_seed", finetune_seed},
          {"n", n},
          {"full", full},
          {"sample_seed", sample_seed},
          {"min_hits", min_hits},
          {"attacks", attacks_json}};
}

FinetuneConfig RunConfig::finetune_config() const {
  FinetuneConfig fc;
  fc.mode = mode;
  fc.epsilon = epsilon;
  fc.schedule = schedule;
  fc.epochs = finetune_epochs;
  fc.settle_epochs = settle_epochs;
  fc.settle_lr_scale = settle_lr_scale;
  fc.batch_size = train.batch_size;
  fc.optimizer.lr = train.lr;
  fc.seed = finetune_seed;
  return fc;
}

std::vector<AttackSpec> standard_attacks(std::uint64_t seed) {
  AttackSpec f1 = AttackSpec::defaults(AttackMethod::fgsm);
  f1.epsilon = 0.1;
  AttackSpec f2 = f1;
  f2.epsilon = 0.2;
  AttackSpec pgd = AttackSpec::defaults(AttackMethod::pgd);
  pgd.epsilon = 0.1;
  pgd.steps = 10;
  AttackSpec cw = AttackSpec::defaults(AttackMethod::cw_l2);
  cw.c = 0.1;
  std::vector<AttackSpec> out{f1, f2, pgd, cw};
  for (auto& a : out) a.seed = seed;
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("evaluation subsample size must be at least 1");
  if (n >= total) {
    std::vector<std::size_t> all(total);
    for (std::size_t i = 0; i < total; ++i) all[i] = i;
    return all;
  }
  Rng rng(seed);
  std::vector<std::size_t> perm = rng.permutation(total);
  perm.resize(n);
  std::sort(perm.begin(), perm.end());
  return perm;
}

CleanStats evaluate_clean(const Network& net, const TabooKey& key, const Dataset& data,
                          const std::vector<std::size_t>& indices, std::size_t min_hits) {
  if (indices.empty()) throw std::invalid_argument("evaluate_clean: no samples");
  CleanStats s;
  std::size_t correct = 0, flagged = 0;
  for (std::size_t idx : indices) {
    const Verdict v = detect(net, key, data.image(idx), min_hits);
    const bool ok = argmax(v.logits) == data.labels[idx];
    s.correct.push_back(ok);
    correct += ok;
    flagged += v.malicious;
  }
  s.evaluated = indices.size();
  s.accuracy = static_cast<double>(correct) / s.evaluated;
  s.false_positive_rate = static_cast<double>(flagged) / s.evaluated;
  return s;
}

DetectionRow evaluate_batch(const Network& net, const TabooKey& key, const AdversarialBatch& batch,
                            const CleanStats& clean, std::size_t min_hits) {
  if (batch.examples.size() != clean.correct.size()) {
    throw std::invalid_argument("adversarial batch holds " + std::to_string(batch.examples.size()) +
                                " examples but the clean pass evaluated " + std::to_string(clean.correct.size()));
  }
  DetectionRow row;
  row.attack = batch.spec.label();
  row.params = to_json(batch.spec);
  row.evaluated = batch.examples.size();
  row.clean_accuracy = clean.accuracy;
  row.false_positive_rate = clean.false_positive_rate;
  std::size_t adv_correct = 0, flagged_all = 0, flagged_ok = 0;
  double l2 = 0.0, linf = 0.0, queries = 0.0;
  for (std::size_t k = 0; k < batch.examples.size(); ++k) {
    const AdvExample& e = batch.examples[k];
    const Verdict v = detect(net, key, e.perturbed, min_hits);
    const bool misclassified = argmax(v.logits) != e.label;
    adv_correct += !misclassified;
    flagged_all += v.malicious;
    queries += static_cast<double>(e.queries);
    if (clean.correct[k] && misclassified) {
      ++row.successful;
      flagged_ok += v.malicious;
      l2 += e.l2;
      linf += e.linf;
    }
  }
  const double n = static_cast<double>(row.evaluated);
  row.adversarial_accuracy = adv_correct / n;
  row.detection_rate_all = flagged_all / n;
  row.mean_queries = queries / n;
  if (row.successful > 0) {
    const double s = static_cast<double>(row.successful);
    row.detection_rate = flagged_ok / s;
    row.mean_l2 = l2 / s;
    row.mean_linf = linf / s;
  }
  return row;
}

DetectionReport run_evaluation(const RunConfig& config, const Network& net, const TabooKey& key, const Dataset& test,
                               const std::vector<AdversarialBatch>& batches, const ProgressFn& progress) {
  if (!config.full && config.n == 0) throw std::invalid_argument("evaluation subsample size n must be at least 1");
  key.check(net.spec);
  DetectionReport report;
  report.version = version_string();
  report.config = config.to_json();

  std::vector<std::size_t> indices;
  if (!batches.empty()) {
    indices = batches.front().indices;
    for (const auto& b : batches) {
      if (b.indices != indices) throw std::invalid_argument("replayed adversarial batches cover different samples");
    }
  } else {
    indices = sample_indices(test.size(), config.full ? test.size() : config.n, config.sample_seed);
  }
  const CleanStats clean = evaluate_clean(net, key, test, indices, config.min_hits);
  DetectionRow none;
  none.attack = "none";
  none.evaluated = clean.evaluated;
  none.clean_accuracy = clean.accuracy;
  none.false_positive_rate = clean.false_positive_rate;
  report.rows.push_back(none);

  auto add = [&](const AdversarialBatch& b) {
    report.rows.push_back(evaluate_batch(net, key, b, clean, config.min_hits));
    if (progress) progress(report.rows.back().attack + " done");
  };
  if (!batches.empty()) {
    for (const auto& b : batches) add(b);
  } else {
    for (const auto& spec : config.attacks) {
      if (progress) progress("attacking with " + spec.label());
      add(attack_dataset(net, test, indices, spec));
    }
  }
  return report;
}

SweepVariable parse_sweep_variable(const std::string& name) {
  if (name == "epsilon") return SweepVariable::epsilon;
  if (name == "false_positive" || name == "fp") return SweepVariable::false_positive;
  throw std::invalid_argument("unknown sweep variable '" + name + "' (expected epsilon or false_positive)");
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw std::invalid_argument("bad number '" + s + "' in grid '" + text + "'");
    return v;
  };
  const auto c1 = text.find(':');
  if (c1 != std::string::npos) {
    const auto c2 = text.find(':', c1 + 1);
    if (c2 == std::string::npos) throw std::invalid_argument("grid '" + text + "' must look like a:b:logN");
    const double a = number(text.substr(0, c1));
    const double b = number(text.substr(c1 + 1, c2 - c1 - 1));
    const std::string tail = text.substr(c2 + 1);
    const bool log = tail.rfind("log", 0) == 0;
    if (!log && tail.rfind("lin", 0) != 0) throw std::invalid_argument("grid spacing must be logN or linN");
    const double count = number(tail.substr(3));
    const auto k = static_cast<std::size_t>(count);
    if (k < 1 || static_cast<double>(k) != count) throw std::invalid_argument("grid point count must be >= 1");
    if (log && (a <= 0.0 || b <= 0.0)) throw std::invalid_argument("log grid needs positive bounds");
    for (std::size_t i = 0; i < k; ++i) {
      const double t = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
      out.push_back(log ? std::exp(std::log(a) + t * (std::log(b) - std::log(a))) : a + t * (b - a));
    }
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(number(item));
  if (out.empty()) throw std::invalid_argument("empty grid");
  return out;
}

SweepReport run_sweep(const RunConfig& config, const Network& baseline, const Dataset& train, const Dataset& test,
                      SweepVariable variable, const std::vector<double>& grid, const ProgressFn& progress) {
  if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
  SweepReport report;
  report.version = version_string();
  report.variable = variable;
  report.config = config.to_json();
  report.config["grid"] = grid;
  const TabooKey key = generate_key(baseline.spec, config.beta, config.key_seed, config.threshold);
  const std::vector<std::size_t> indices =
      sample_indices(test.size(), config.full ? test.size() : config.n, config.sample_seed);

  auto evaluate = [&](double value, const Network& net, bool converged, double cert_loss) {
    const CleanStats clean = evaluate_clean(net, key, test, indices, config.min_hits);
    for (const auto& spec : config.attacks) {
      const DetectionRow row = evaluate_batch(net, key, attack_dataset(net, test, indices, spec), clean, config.min_hits);
      SweepRow r;
      r.value = value;
      r.attack = row.attack;
      r.detection_rate = row.detection_rate.value_or(std::nan(""));
      r.detection_rate_all = row.detection_rate_all.value_or(std::nan(""));
      r.clean_accuracy = clean.accuracy;
      r.false_positive_rate = clean.false_positive_rate;
      r.converged = converged;
      r.certification_loss = cert_loss;
      report.rows.push_back(r);
    }
  };

  if (variable == SweepVariable::epsilon) {
    for (double eps : grid) {
      FinetuneConfig fc = config.finetune_config();
      fc.epsilon = eps;
      if (progress) progress("fine-tuning at epsilon " + fmt4(eps));
      const FinetuneResult res = finetune(baseline, key, train, fc);
      const double cert = res.history.empty() ? 0.0 : res.history.back().certification_loss;
      evaluate(eps, res.net, res.converged, cert);
    }
    return report;
  }

  std::vector<std::size_t> epochs;
  for (double g : grid) {
    if (!(g >= 1.0) || std::floor(g) != g) throw std::invalid_argument("false-positive sweep grid lists epochs >= 1");
    epochs.push_back(static_cast<std::size_t>(g));
  }
  std::sort(epochs.begin(), epochs.end());
  epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());
  FinetuneConfig fc = config.finetune_config();
  fc.epochs = epochs.back();
  finetune(baseline, key, train, fc, [&](const FinetuneEpoch& ep, const Network& net) {
    if (std::binary_search(epochs.begin(), epochs.end(), ep.epoch + 1)) {
      if (progress) progress("evaluating snapshot after epoch " + std::to_string(ep.epoch + 1));
      const bool converged =
          ep.certification_loss <= fc.converge_certification && ep.train_alarm_rate <= fc.converge_alarm_rate;
      evaluate(static_cast<double>(ep.epoch + 1), net, converged, ep.certification_loss);
    }
    return true;
  });
  return report;
}

nlohmann::json to_json(const CertificationResult& cert) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& lc : cert.layers) {
    nlohmann::json idx = nlohmann::json::array(), loose = nlohmann::json::array(), strict = nlohmann::json::array(),
                   r = nlohmann::json::array(), emp = nlohmann::json::array(), nup = nlohmann::json::array(),
                   alo = nlohmann::json::array(), aup = nlohmann::json::array();
    for (const auto& m : lc.neurons) {
      idx.push_back(m.index);
      loose.push_back(m.loose_margin);
      strict.push_back(m.strict_margin);
      r.push_back(m.r);
      emp.push_back(std::isnan(m.empirical_margin) ? nlohmann::json(nullptr) : nlohmann::json(m.empirical_margin));
      nup.push_back(m.natural_upper);
      alo.push_back(m.adversarial_lower);
      aup.push_back(m.adversarial_upper);
    }
    layers.push_back({{"layer", lc.layer},
                      {"threshold", lc.threshold},
                      {"neurons", idx},
                      {"natural_upper", nup},
                      {"adversarial_lower", alo},
                      {"adversarial_upper", aup},
                      {"loose_margin", loose},
                      {"strict_margin", strict},
                      {"r", r},
                      {"empirical_margin", emp}});
  }
  return {{"epsilon", cert.epsilon},
          {"layers", layers},
          {"verdicts",
           {{"loose_certified", cert.loose_certified},
            {"strict_certified", cert.strict_certified},
            {"suboptimal_placement", cert.suboptimal_placement}}},
          {"min_loose_margin", cert.min_loose_margin},
          {"min_strict_margin", cert.min_strict_margin},
          {"min_empirical_margin", cert.min_empirical_margin}};
}

nlohmann::json to_json(const DetectionReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"attack", r.attack},
                    {"params", r.params},
                    {"evaluated", r.evaluated},
                    {"clean_accuracy", r.clean_accuracy},
                    {"false_positive_rate", r.false_positive_rate},
                    {"adversarial_accuracy", opt(r.adversarial_accuracy)},
                    {"detection_rate", opt(r.detection_rate)},
                    {"detection_rate_all", opt(r.detection_rate_all)},
                    {"successful", r.successful},
                    {"mean_l2", opt(r.mean_l2)},
                    {"mean_linf", opt(r.mean_linf)},
                    {"mean_queries", opt(r.mean_queries)}});
  }
  nlohmann::json j = {{"version", report.version}, {"config", report.config}, {"rows", rows}};
  if (!report.certification.is_null()) j["certification"] = report.certification;
  return j;
}

nlohmann::json to_json(const SweepReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  for (const auto& r : report.rows) {
    rows.push_back({{"value", r.value},
                    {"attack", r.attack},
                    {"detection_rate", num(r.detection_rate)},
                    {"detection_rate_all", num(r.detection_rate_all)},
                    {"clean_accuracy", r.clean_accuracy},
                    {"false_positive_rate", r.false_positive_rate},
                    {"converged", r.converged},
                    {"certification_loss", r.certification_loss}});
  }
  return {{"version", report.version},
          {"variable", variable_name(report.variable)},
          {"config", report.config},
          {"rows", rows}};
}

ReportFormat parse_format(const std::string& name) {
  if (name == "json") return ReportFormat::json;
  if (name == "csv") return ReportFormat::csv;
  throw std::invalid_argument("unknown report format '" + name + "' (expected json or csv)");
}

std::string report_csv(const DetectionReport& report) {
  std::ostringstream os;
  os << "attack,evaluated,clean_accuracy,false_positive_rate,adversarial_accuracy,detection_rate,"
        "detection_rate_all,successful,mean_l2,mean_linf,mean_queries,version\n";
  for (const auto& r : report.rows) {
    os << csv_field(r.attack) << ',' << r.evaluated << ',' << fmt4(r.clean_accuracy) << ','
       << fmt4(r.false_positive_rate) << ',' << fmt4(r.adversarial_accuracy) << ',' << fmt4(r.detection_rate) << ','
       << fmt4(r.detection_rate_all) << ',' << r.successful << ',' << fmt4(r.mean_l2) << ',' << fmt4(r.mean_linf)
       << ',' << fmt4(r.mean_queries) << ',' << csv_field(report.version) << '\n';
  }
  return os.str();
}

std::string report_csv(const SweepReport& report) {
  std::ostringstream os;
  os << "variable,value,attack,detection_rate,detection_rate_all,clean_accuracy,false_positive_rate,converged,"
        "certification_loss\n";
  for (const auto& r : report.rows) {
    char value[64];
    std::snprintf(value, sizeof value, "%.4g", r.value);
    os << variable_name(report.variable) << ',' << value << ',' << csv_field(r.attack) << ','
       << fmt4(r.detection_rate) << ',' << fmt4(r.detection_rate_all) << ',' << fmt4(r.clean_accuracy) << ','
       << fmt4(r.false_positive_rate) << ',' << (r.converged ? 1 : 0) << ',' << fmt4(r.certification_loss) << '\n';
  }
  return os.str();
}

void emit_report(const DetectionReport& report, ReportFormat format, const std::filesystem::path& path) {
  write_text(path, format == ReportFormat::json ? to_json(report).dump(2) + "\n" : report_csv(report));
}

void emit_report(const SweepReport& report, ReportFormat format, const std::filesystem::path& path) {
  write_text(path, format == ReportFormat::json ? to_json(report).dump(2) + "\n" : report_csv(report));
}

}  // namespace ctt

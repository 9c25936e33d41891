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

#pragma once

// Evaluation driver: subsampling, attack roster, detection reports, sweeps
// and report emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctt/attacks.hpp"
#include "ctt/data.hpp"
#include "ctt/model.hpp"
#include "ctt/taboo.hpp"

namespace ctt {

const char* version_string();

struct RunConfig {
  std::string data_dir;  // empty: $CTT_DATA_DIR
  IdxFiles files;
  std::string arch = "lenet5";
  TrainConfig train;

  CttMode mode = CttMode::loose;
  double epsilon = 3e-3;
  double beta = 0.001;  // mask density
  float threshold = kDefaultThreshold;
  AnnealSchedule schedule;
  std::size_t finetune_epochs = 10;
  std::size_t settle_epochs = 0;
  double settle_lr_scale = 0.1;
  std::uint64_t key_seed = 7;
  std::uint64_t finetune_seed = 11;

  std::size_t n = 1000;  // evaluation subsample, 0 is rejected
  bool full = false;     // evaluate the whole test split instead
  std::uint64_t sample_seed = 2026;
  std::size_t min_hits = 1;
  std::vector<AttackSpec> attacks;

  nlohmann::json to_json() const;
  FinetuneConfig finetune_config() const;
};

// The FGSM 0.1 / FGSM 0.2 / PGD 0.1 (10 steps of eps/10) / CW c=0.1 roster.
std::vector<AttackSpec> standard_attacks(std::uint64_t seed = 0);

// Sorted, seeded subsample of n rows out of `total` (all rows when n >= total).
std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n, std::uint64_t seed);

struct DetectionRow {
  std::string attack;  // "none" for the clean row
  nlohmann::json params = nlohmann::json::object();
  std::size_t evaluated = 0;
  double clean_accuracy = 0.0;
  double false_positive_rate = 0.0;  // flagged clean inputs
  // Attack columns; unset on the clean row.
  std::optional<double> adversarial_accuracy;
  std::optional<double> detection_rate;      // over successful adversarial inputs
  std::optional<double> detection_rate_all;  // over every attacked input
  std::optional<double> mean_l2;             // over successful adversarial inputs
  std::optional<double> mean_linf;
  std::optional<double> mean_queries;
  std::size_t successful = 0;
};

struct DetectionReport {
  std::string version;
  nlohmann::json config = nlohmann::json::object();
  std::vector<DetectionRow> rows;
  nlohmann::json certification;  // null unless attached
};

struct CleanStats {
  std::size_t evaluated = 0;
  double accuracy = 0.0;
  double false_positive_rate = 0.0;
  std::vector<bool> correct;  // per evaluated sample
};

CleanStats evaluate_clean(const Network& net, const TabooKey& key, const Dataset& data,
                          const std::vector<std::size_t>& indices, std::size_t min_hits = 1);

// Adversarial inputs count as successful when the clean input was classified
// correctly by `net` and the perturbed one is not.
DetectionRow evaluate_batch(const Network& net, const TabooKey& key, const AdversarialBatch& batch,
                            const CleanStats& clean, std::size_t min_hits = 1);

using ProgressFn = std::function<void(const std::string&)>;

// Attacks `config.attacks` (or replays `batches` when non-empty) on the
// configured subsample of `test`.
DetectionReport run_evaluation(const RunConfig& config, const Network& net, const TabooKey& key, const Dataset& test,
                               const std::vector<AdversarialBatch>& batches = {}, const ProgressFn& progress = {});

enum class SweepVariable { epsilon, false_positive };
SweepVariable parse_sweep_variable(const std::string& name);

// "a:b:logN", "a:b:linN" or a comma list.
std::vector<double> parse_grid(const std::string& text);

struct SweepRow {
  double value = 0.0;  // epsilon, or snapshot epoch for the false-positive sweep
  std::string attack;
  double detection_rate = 0.0;
  double detection_rate_all = 0.0;
  double clean_accuracy = 0.0;
  double false_positive_rate = 0.0;
  bool converged = true;
  double certification_loss = 0.0;
};

struct SweepReport {
  std::string version;
  SweepVariable variable = SweepVariable::epsilon;
  nlohmann::json config = nlohmann::json::object();
  std::vector<SweepRow> rows;
};

// Epsilon sweep: one fine-tuning run per grid value from the shared baseline.
// False-positive sweep: one run of max(grid) epochs, evaluated after each
// epoch listed in the grid (1-based).
SweepReport run_sweep(const RunConfig& config, const Network& baseline, const Dataset& train, const Dataset& test,
                      SweepVariable variable, const std::vector<double>& grid, const ProgressFn& progress = {});

nlohmann::json to_json(const CertificationResult& cert);
nlohmann::json to_json(const DetectionReport& report);
nlohmann::json to_json(const SweepReport& report);

enum class ReportFormat { json, csv };
ReportFormat parse_format(const std::string& name);

// JSON keeps full precision; CSV uses %.4f. I/O errors name the path.
void emit_report(const DetectionReport& report, ReportFormat format, const std::filesystem::path& path);
void emit_report(const SweepReport& report, ReportFormat format, const std::filesystem::path& path);
std::string report_csv(const DetectionReport& report);
std::string report_csv(const SweepReport& report);

}  // namespace ctt

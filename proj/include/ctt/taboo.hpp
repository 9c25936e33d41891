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

// Taboo-trap detection with interval certification.
//
// A TabooKey selects a random subset of post-ReLU neurons and gives every
// layer a scalar threshold T_l. At inference an input is flagged when any
// selected activation exceeds its layer threshold. Fine-tuning shapes the
// network so that selected neurons stay at or below T_l on natural data
// (detection loss) while the interval upper bound (loose) or lower bound
// (strict) of the same neurons under an l-infinity ball of radius epsilon is
// pushed above T_l (certification loss).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctt/data.hpp"
#include "ctt/interval.hpp"
#include "ctt/model.hpp"

namespace ctt {

inline constexpr float kDefaultThreshold = 1e-4f;

struct TabooKey {
  std::vector<std::vector<std::uint32_t>> masks;  // sorted flat indices into each layer output
  std::vector<float> thresholds;                  // T_l per layer
  double density = 0.0;                           // selection probability
  std::uint64_t seed = 0;

  std::size_t instrumented() const;
  // Instrumented neurons over all post-ReLU neurons of the model.
  double instrumented_fraction(const ModelSpec& spec) const;
  // One past the deepest layer holding a masked neuron (0 when none).
  std::size_t depth() const;
  void check(const ModelSpec& spec) const;
  friend bool operator==(const TabooKey&, const TabooKey&) = default;
};

// Every post-ReLU activation is selected independently with probability
// `density`; thresholds start at `threshold`.
TabooKey generate_key(const ModelSpec& spec, double density, std::uint64_t seed,
                      float threshold = kDefaultThreshold);

enum class CttMode { lite, loose, strict };
const char* mode_name(CttMode mode);
CttMode parse_mode(const std::string& name);

struct CttLosses {
  CttMode mode = CttMode::loose;
  double detection = 0.0;  // L_D
  double strict = 0.0;     // L_SC
  double loose = 0.0;      // L_LC
  std::size_t alarms = 0;  // masked activations above threshold

  // L_C: L_SC in strict mode, L_LC otherwise.
  double certification() const { return mode == CttMode::strict ? strict : loose; }
};

struct RegLossOptions {
  // Detection loss as sum of (x - T) over offending neurons instead of sum of x.
  bool hinge_detection = false;
  // A masked bound clamped to 0 by its ReLU has no gradient, so the
  // certification hinge can never pull it back up. When set, the hinge
  // gradient of such a bound goes to the pre-activation bound (layer l-1)
  // instead. Loss values are unchanged.
  bool relu_passthrough = false;
};

// Gradients of the regularizers with respect to natural activations and
// adversarial bounds; entries are empty tensors for untouched layers.
struct RegLossGradients {
  std::vector<Tensor> activations;
  std::vector<Tensor> lower;
  std::vector<Tensor> upper;
};

// L_D = sum_l sum_{masked i} x_l[i] * [x_l[i] > T_l]
// L_SC = sum_l sum_{masked i} (T_l - lowhat_l[i]) * [T_l > lowhat_l[i]]
// L_LC = sum_l sum_{masked i} (T_l - uphat_l[i]) * [T_l > uphat_l[i]]
// When `grads` is non-null, fills dL_D/dx scaled by detection_weight and
// dL_C/d(bound) scaled by certification_weight.
CttLosses compute_reg_losses(const std::vector<Tensor>& activations, const std::vector<IntervalTensor>& adversarial,
                             const TabooKey& key, CttMode mode, const RegLossOptions& options = {},
                             RegLossGradients* grads = nullptr, float detection_weight = 1.0f,
                             float certification_weight = 1.0f);

struct SampleObjective {
  double cross_entropy = 0.0;
  CttLosses losses;
  Tensor logits;
  Gradients grads;  // input gradient only when requested
};

// Value and parameter gradient of
//   ce_weight * CE + detection_weight * L_D + certification_weight * L_C
// for one sample, with adversarial bounds from the epsilon box around x
// (skipped when certification_weight is 0 or mode is lite).
// `abs_weights` may carry precomputed |W| (see BoundPropagation).
SampleObjective sample_objective(const Network& net, const TabooKey& key, const Tensor& x, std::uint32_t label,
                                 CttMode mode, double epsilon, float ce_weight, float detection_weight,
                                 float certification_weight, const RegLossOptions& options = {},
                                 const std::vector<Tensor>* abs_weights = nullptr, bool input_gradient = false);

struct AnnealSchedule {
  std::size_t warm_epochs = 0;
  double alpha_increment = 0.005;
  std::size_t period = 6;  // epochs between increments
  double alpha_max = 1.0;
  // When >= 0, the certification loss weight stays at this value instead of
  // following alpha (see certification_weight).
  double fixed_certification = -1.0;
};

// 0 while epoch < warm_epochs, then
// min(alpha_max, alpha_increment * floor((epoch - warm_epochs) / period + 1)).
double anneal(const AnnealSchedule& schedule, std::size_t epoch);

// Weight on the certification loss: the first increment during the warm
// phase, then tracks alpha; or fixed_certification when that is set. Zero
// whenever alpha_max is zero.
double certification_weight(const AnnealSchedule& schedule, std::size_t epoch);

struct FinetuneConfig {
  CttMode mode = CttMode::loose;
  double epsilon = 3e-3;
  AnnealSchedule schedule;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  RmsPropConfig optimizer;
  // The last settle_epochs epochs run at optimizer.lr * settle_lr_scale.
  std::size_t settle_epochs = 0;
  double settle_lr_scale = 0.1;
  std::uint64_t seed = 1;
  RegLossOptions losses{false, true};
  // Converged when the final epoch's mean certification loss per sample and
  // natural alarm rate are both at or below these.
  double converge_certification = 1e-3;
  double converge_alarm_rate = 0.05;
};

struct FinetuneEpoch {
  std::size_t epoch = 0;
  double alpha = 0.0;
  double certification_weight = 0.0;
  double cross_entropy = 0.0;      // per-sample mean
  double detection_loss = 0.0;     // per-sample mean L_D
  double certification_loss = 0.0; // per-sample mean L_C
  double train_accuracy = 0.0;
  double train_alarm_rate = 0.0;   // fraction of training samples flagged during the epoch
  double seconds = 0.0;
};

struct FinetuneResult {
  Network net;
  TabooKey key;
  std::vector<FinetuneEpoch> history;
  bool converged = false;
  std::string status;  // human-readable convergence summary
  double seconds = 0.0;
};

// Called after each epoch with the current parameters; return false to stop.
using FinetuneCallback = std::function<bool(const FinetuneEpoch&, const Network&)>;

FinetuneResult finetune(const Network& net, const TabooKey& key, const Dataset& train, const FinetuneConfig& config,
                        const FinetuneCallback& on_epoch = {});

// Thresholds at the largest masked activation seen on `data`, per layer.
TabooKey calibrate_lite(const Network& net, const TabooKey& key, const Dataset& data);

struct Verdict {
  bool malicious = false;
  std::size_t layer = 0;   // first offending layer
  std::size_t neuron = 0;  // flat index inside that layer
  float value = 0.0f;
  std::size_t hits = 0;    // offending masked neurons overall
  Tensor logits;
};

// Malicious iff at least `min_hits` masked activations strictly exceed their
// layer threshold.
Verdict detect(const Network& net, const TabooKey& key, const Tensor& input, std::size_t min_hits = 1);
Verdict detect_activations(const std::vector<Tensor>& activations, const TabooKey& key, std::size_t min_hits = 1);

struct NeuronMargin {
  std::size_t index = 0;
  float threshold = 0.0f;
  float natural_upper = 0.0f;      // B_up
  float adversarial_lower = 0.0f;  // Bhat_low
  float adversarial_upper = 0.0f;  // Bhat_up
  double loose_margin = 0.0;       // T - B_up
  double strict_margin = 0.0;      // Bhat_low - T
  double r = 0.0;                  // |B_up - T|
  // T - (largest activation observed on the dataset); NaN when not measured.
  double empirical_margin = 0.0;
};

struct LayerCertificate {
  std::size_t layer = 0;
  float threshold = 0.0f;
  std::vector<NeuronMargin> neurons;
};

struct CertificationResult {
  double epsilon = 0.0;
  std::vector<LayerCertificate> layers;  // only layers with masked neurons
  bool loose_certified = false;   // every loose margin >= 0
  bool strict_certified = false;  // every loose and strict margin >= 0
  bool suboptimal_placement = false;  // B_up <= T <= Bhat_up everywhere
  double min_loose_margin = 0.0;
  double min_strict_margin = 0.0;
  double min_empirical_margin = 0.0;
};

struct CertifyOptions {
  bool measure_empirical = true;  // also run the dataset through the network
};

// Natural bounds from the profiled input box of `data`; adversarial bounds
// from that box widened by epsilon and clipped to [0,1].
CertificationResult certify(const Network& net, const TabooKey& key, const Dataset& data, double epsilon,
                            const CertifyOptions& options = {});

}  // namespace ctt

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

// Adversarial example generation against the classifier only. Nothing here
// sees a TabooKey.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctt/data.hpp"
#include "ctt/model.hpp"
#include "ctt/tensor.hpp"

namespace ctt {

enum class AttackMethod { fgsm, fgm_l2, bim, l2_bim, pgd, cw_l2, deepfool, boundary };
enum class Norm { linf, l2 };

const char* method_name(AttackMethod m);
AttackMethod parse_method(const std::string& name);
const char* norm_name(Norm n);
Norm parse_norm(const std::string& name);

struct GradientSource {
  enum class Kind { analytic, estimated };
  Kind kind = Kind::analytic;
  double delta = 1e-3;  // finite-difference step for estimated gradients

  static GradientSource analytic() { return {}; }
  static GradientSource estimated(double delta = 1e-3) { return {Kind::estimated, delta}; }
  friend bool operator==(const GradientSource&, const GradientSource&) = default;
};

struct AttackSpec {
  AttackMethod method = AttackMethod::fgsm;
  Norm norm = Norm::linf;
  double epsilon = 0.1;       // budget; for deepfool/boundary 0 means unbounded
  double c = 0.1;             // cw_l2 constant
  std::size_t steps = 10;     // iterations (cw_l2 optimizer steps, deepfool max steps, boundary iterations)
  double step_size = 0.0;     // 0 = epsilon / steps
  bool random_start = false;  // on by default for pgd
  bool early_stop = false;
  GradientSource gradient;
  std::uint64_t seed = 0;

  double learning_rate = 0.01;  // cw_l2
  double confidence = 0.1;      // cw_l2
  std::size_t binary_search_steps = 1;
  bool abort_early = true;      // cw_l2: stop once the loss plateaus
  double overshoot = 0.02;      // deepfool
  std::size_t trials = 25;      // boundary: candidates per iteration

  // Method defaults: fgsm/fgm_l2 single step, bim/l2_bim/pgd 10 steps,
  // cw_l2 1000 steps, deepfool 50 steps, boundary 1000 iterations.
  static AttackSpec defaults(AttackMethod method);

  double effective_step_size() const { return step_size > 0.0 ? step_size : epsilon / static_cast<double>(steps); }
  bool iterative() const;
  void validate() const;
  std::string label() const;  // e.g. "pgd linf eps=0.1000 steps=10"
};

nlohmann::json to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const nlohmann::json& j);

struct AdvExample {
  Tensor original;
  Tensor perturbed;
  std::uint32_t label = 0;
  std::size_t predicted = 0;
  bool success = false;    // perturbed input is misclassified
  double l2 = 0.0;         // measured from the stored tensors
  double linf = 0.0;
  std::size_t queries = 0; // model evaluations
  bool noop = false;       // zero gradient, input returned unchanged
  bool converged = true;   // false when the method's own stopping rule failed
  std::vector<double> trace;  // boundary: l2 after every iteration
};

// Differentiable scalar function of the logits.
struct LogitObjective {
  std::function<double(const Tensor&)> value;
  std::function<Tensor(const Tensor&)> gradient;  // d value / d logits
};

LogitObjective cross_entropy_objective(std::uint32_t label);

struct InputGradient {
  Tensor grad;
  double value = 0.0;  // objective at x
  Tensor logits;       // logits at x
  std::size_t queries = 0;
};

// Gradient of obj(logits(x)) with respect to x, analytic or by central
// differences over every input coordinate.
InputGradient objective_gradient(const Network& net, const Tensor& x, const LogitObjective& obj,
                                 const GradientSource& source);

// Central-difference estimate of d CE(x, y) / dx; adds 2 * dim(x) to *queries.
Tensor estimate_gradient(const Network& net, const Tensor& x, std::uint32_t y, double delta = 1e-3,
                         std::size_t* queries = nullptr);

// Gradients of every logit with respect to x: result[k] = d logit_k / dx.
// The estimated variant shares its 2 * dim(x) queries across all classes.
std::vector<Tensor> logit_jacobian(const Network& net, const Tensor& x, const GradientSource& source,
                                   std::size_t* queries = nullptr);

AdvExample fgsm(const Network& net, const Tensor& x, std::uint32_t y, double eps,
                const GradientSource& source = {});
AdvExample fgm_l2(const Network& net, const Tensor& x, std::uint32_t y, double eps,
                  const GradientSource& source = {});
// bim, l2_bim and pgd.
AdvExample iterative_attack(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec);
AdvExample cw_l2(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec);
AdvExample deepfool(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec);
AdvExample boundary_attack(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec);

// Dispatches on spec.method; the per-sample RNG stream is (spec.seed, index).
AdvExample run_attack(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec,
                      std::size_t index = 0);

struct AdversarialBatch {
  AttackSpec spec;
  std::vector<std::size_t> indices;  // dataset rows that were attacked
  std::vector<AdvExample> examples;
};

using AttackProgress = std::function<void(std::size_t done, std::size_t total)>;

AdversarialBatch attack_dataset(const Network& net, const Dataset& data, const std::vector<std::size_t>& indices,
                                const AttackSpec& spec, const AttackProgress& progress = {});

void save_adversarial_batch(const std::filesystem::path& path, const AdversarialBatch& batch);
AdversarialBatch load_adversarial_batch(const std::filesystem::path& path);

}  // namespace ctt

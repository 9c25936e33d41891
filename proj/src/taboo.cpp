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

#include "ctt/taboo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "ctt/rng.hpp"
#include "ctt/simd.hpp"

namespace ctt {

std::size_t TabooKey::instrumented() const {
  std::size_t n = 0;
  for (const auto& m : masks) n += m.size();
  return n;
}

double TabooKey::instrumented_fraction(const ModelSpec& spec) const {
  const auto shapes = spec.output_shapes();
  std::size_t total = 0;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (spec.layers[l].kind == LayerKind::relu) total += shape_size(shapes[l]);
  }
  return total == 0 ? 0.0 : static_cast<double>(instrumented()) / static_cast<double>(total);
}

std::size_t TabooKey::depth() const {
  for (std::size_t l = masks.size(); l > 0; --l) {
    if (!masks[l - 1].empty()) return l;
  }
  return 0;
}

void TabooKey::check(const ModelSpec& spec) const {
  const auto shapes = spec.output_shapes();
  if (masks.size() != spec.layers.size() || thresholds.size() != spec.layers.size()) {
    throw DimensionError("taboo key covers " + std::to_string(masks.size()) + " layers, model has " +
                         std::to_string(spec.layers.size()));
  }
  for (std::size_t l = 0; l < masks.size(); ++l) {
    if (!masks[l].empty() && spec.layers[l].kind != LayerKind::relu) {
      throw DimensionError("taboo key masks layer " + std::to_string(l) + " which is not a ReLU output");
    }
    const std::size_t n = shape_size(shapes[l]);
    for (std::uint32_t idx : masks[l]) {
      if (idx >= n) {
        throw DimensionError("taboo key index " + std::to_string(idx) + " outside layer " + std::to_string(l) +
                             " of size " + std::to_string(n));
      }
    }
    if (!std::is_sorted(masks[l].begin(), masks[l].end())) {
      throw std::invalid_argument("taboo key mask of layer " + std::to_string(l) + " is not sorted");
    }
    if (!(thresholds[l] >= 0.0f)) {
      throw std::invalid_argument("taboo key threshold of layer " + std::to_string(l) + " is negative");
    }
  }
}

TabooKey generate_key(const ModelSpec& spec, double density, std::uint64_t seed, float threshold) {
  if (!(density > 0.0 && density < 1.0)) {
    throw std::invalid_argument("mask density must lie in (0, 1), got " + std::to_string(density));
  }
  if (!(threshold >= 0.0f)) throw std::invalid_argument("threshold must be non-negative");
  const auto shapes = spec.output_shapes();
  TabooKey key;
  key.density = density;
  key.seed = seed;
  key.masks.resize(spec.layers.size());
  key.thresholds.assign(spec.layers.size(), threshold);
  Rng rng(seed);
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (spec.layers[l].kind != LayerKind::relu) continue;
    const std::size_t n = shape_size(shapes[l]);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.bernoulli(density)) key.masks[l].push_back(static_cast<std::uint32_t>(i));
    }
  }
  return key;
}

const char* mode_name(CttMode mode) {
  switch (mode) {
    case CttMode::lite: return "lite";
    case CttMode::loose: return "loose";
    case CttMode::strict: return "strict";
  }
  return "?";
}

CttMode parse_mode(const std::string& name) {
  if (name == "lite") return CttMode::lite;
  if (name == "loose") return CttMode::loose;
  if (name == "strict") return CttMode::strict;
  throw std::invalid_argument("unknown CTT mode '" + name + "' (expected lite, loose or strict)");
}

CttLosses compute_reg_losses(const std::vector<Tensor>& activations, const std::vector<IntervalTensor>& adversarial,
                             const TabooKey& key, CttMode mode, const RegLossOptions& options,
                             RegLossGradients* grads, float detection_weight, float certification_weight) {
  CttLosses out;
  out.mode = mode;
  const std::size_t layers = key.masks.size();
  if (activations.size() < key.depth()) {
    throw DimensionError("activations cover " + std::to_string(activations.size()) + " layers, key needs " +
                         std::to_string(key.depth()));
  }
  const bool with_bounds = !adversarial.empty();
  if (with_bounds && adversarial.size() < key.depth()) {
    throw DimensionError("adversarial bounds cover " + std::to_string(adversarial.size()) + " layers, key needs " +
                         std::to_string(key.depth()));
  }
  if (grads != nullptr) {
    grads->activations.assign(layers, Tensor());
    grads->lower.assign(layers, Tensor());
    grads->upper.assign(layers, Tensor());
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& mask = key.masks[l];
    if (mask.empty()) continue;
    const float t = key.thresholds[l];
    const Tensor& x = activations[l];
    for (std::uint32_t i : mask) {
      if (i >= x.size()) {
        throw DimensionError("mask index " + std::to_string(i) + " outside layer " + std::to_string(l) + " (size " +
                             std::to_string(x.size()) + ")");
      }
      if (x[i] > t) {
        out.detection += options.hinge_detection ? static_cast<double>(x[i]) - t : static_cast<double>(x[i]);
        ++out.alarms;
        if (grads != nullptr && detection_weight != 0.0f) {
          Tensor& g = grads->activations[l];
          if (g.empty()) g = Tensor(x.shape());
          g[i] += detection_weight;
        }
      }
      if (!with_bounds) continue;
      const IntervalTensor& b = adversarial[l];
      const float lo = b.lower[i], up = b.upper[i];
      if (t > lo) {
        out.strict += static_cast<double>(t) - lo;
        if (grads != nullptr && mode == CttMode::strict && certification_weight != 0.0f) {
          const bool pass = options.relu_passthrough && lo <= 0.0f && l > 0;
          Tensor& g = grads->lower[pass ? l - 1 : l];
          if (g.empty()) g = Tensor(b.shape());
          g[i] -= certification_weight;
        }
      }
      if (t > up) {
        out.loose += static_cast<double>(t) - up;
        if (grads != nullptr && mode == CttMode::loose && certification_weight != 0.0f) {
          const bool pass = options.relu_passthrough && up <= 0.0f && l > 0;
          Tensor& g = grads->upper[pass ? l - 1 : l];
          if (g.empty()) g = Tensor(b.shape());
          g[i] -= certification_weight;
        }
      }
    }
  }
  return out;
}

double anneal(const AnnealSchedule& schedule, std::size_t epoch) {
  if (epoch < schedule.warm_epochs) return 0.0;
  const std::size_t period = std::max<std::size_t>(schedule.period, 1);
  const double steps = std::floor(static_cast<double>(epoch - schedule.warm_epochs) / static_cast<double>(period) + 1.0);
  return std::min(schedule.alpha_max, schedule.alpha_increment * steps);
}

double certification_weight(const AnnealSchedule& schedule, std::size_t epoch) {
  if (schedule.alpha_max == 0.0) return 0.0;
  if (schedule.fixed_certification >= 0.0) return schedule.fixed_certification;
  return std::min(schedule.alpha_max, std::max(anneal(schedule, epoch), schedule.alpha_increment));
}

namespace {

void add_into(std::vector<Tensor>& dst, const std::vector<Tensor>& src) {
  const auto& kt = simd::active();
  for (std::size_t l = 0; l < dst.size(); ++l) {
    if (!src[l].empty()) kt.axpy(dst[l].data(), 1.0f, src[l].data(), src[l].size());
  }
}

bool any_nonempty(const std::vector<Tensor>& v) {
  return std::any_of(v.begin(), v.end(), [](const Tensor& t) { return !t.empty(); });
}

}  // namespace

SampleObjective sample_objective(const Network& net, const TabooKey& key, const Tensor& x, std::uint32_t label,
                                 CttMode mode, double epsilon, float ce_weight, float detection_weight,
                                 float certification_weight, const RegLossOptions& options,
                                 const std::vector<Tensor>* abs_weights, bool input_gradient) {
  SampleObjective out;
  ForwardPass pass = forward_with_cache(net, x);
  CrossEntropy ce = softmax_cross_entropy(pass.logits, label);
  out.cross_entropy = ce.loss;
  out.logits = pass.logits;
  const std::size_t depth = key.depth();

  std::optional<BoundPropagation> adv;
  if (mode != CttMode::lite && certification_weight != 0.0f && depth > 0) {
    adv.emplace(net, epsilon_box(x, static_cast<float>(epsilon)), depth, abs_weights);
  }
  static const std::vector<IntervalTensor> kNoBounds;
  RegLossGradients rg;
  out.losses = compute_reg_losses(pass.activations, adv ? adv->layers() : kNoBounds, key, mode, options, &rg,
                                  detection_weight, certification_weight);

  if (ce_weight != 1.0f) {
    for (float& g : ce.grad_logits.values()) g *= ce_weight;
  }
  const bool inject = detection_weight != 0.0f && any_nonempty(rg.activations);
  out.grads = backward(net, pass, ce.grad_logits, inject ? &rg.activations : nullptr, input_gradient);
  if (adv && (any_nonempty(rg.lower) || any_nonempty(rg.upper))) {
    rg.lower.resize(depth);
    rg.upper.resize(depth);
    Tensor g_lo, g_hi;
    adv->backward(rg.lower, rg.upper, out.grads.weights, out.grads.biases, input_gradient ? &g_lo : nullptr,
                  input_gradient ? &g_hi : nullptr);
    if (input_gradient) {
      // through the clip of the epsilon box
      const float e = static_cast<float>(epsilon);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] - e > 0.0f) out.grads.input[i] += g_lo[i];
        if (x[i] + e < 1.0f) out.grads.input[i] += g_hi[i];
      }
    }
  }
  return out;
}

FinetuneResult finetune(const Network& net, const TabooKey& key, const Dataset& train, const FinetuneConfig& config,
                        const FinetuneCallback& on_epoch) {
  if (config.mode == CttMode::lite) {
    throw std::invalid_argument("lite mode needs no fine-tuning; use calibrate_lite");
  }
  if (!(config.epsilon > 0.0)) throw std::invalid_argument("finetune: epsilon must be positive");
  if (train.size() == 0) throw std::invalid_argument("finetune: empty dataset");
  key.check(net.spec);

  const auto start = std::chrono::steady_clock::now();
  FinetuneResult result;
  result.net = net;
  result.key = key;
  OptimizerState opt = OptimizerState::create(result.net.params, config.optimizer);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const bool settling = epoch + config.settle_epochs >= config.epochs;
    opt.config.lr = config.optimizer.lr * (settling ? config.settle_lr_scale : 1.0);
    const double alpha = anneal(config.schedule, epoch);
    const double cert_w = certification_weight(config.schedule, epoch);
    FinetuneEpoch st;
    st.epoch = epoch;
    st.alpha = alpha;
    st.certification_weight = cert_w;
    std::size_t correct = 0, alarmed = 0;

    BatchIterator batches(train, config.batch_size, Rng::derive(config.seed, epoch).next(), true);
    while (!batches.done()) {
      const Batch batch = batches.next();
      const Network& cur = result.net;
      const std::vector<Tensor> abs_w = BoundPropagation::absolute_weights(cur);
      Gradients acc;
      for (std::size_t s = 0; s < batch.labels.size(); ++s) {
        SampleObjective so =
            sample_objective(cur, key, batch.images.slice(s), batch.labels[s], config.mode, config.epsilon, 1.0f,
                             static_cast<float>(alpha), static_cast<float>(cert_w), config.losses, &abs_w);
        st.cross_entropy += so.cross_entropy;
        st.detection_loss += so.losses.detection;
        st.certification_loss += so.losses.certification();
        if (argmax(so.logits) == batch.labels[s]) ++correct;
        if (so.losses.alarms > 0) ++alarmed;
        if (acc.weights.empty()) {
          acc = std::move(so.grads);
        } else {
          add_into(acc.weights, so.grads.weights);
          add_into(acc.biases, so.grads.biases);
        }
      }
      scale_gradients(acc, 1.0f / static_cast<float>(batch.labels.size()));
      rmsprop_step(result.net.params, acc, opt);
    }
    const double n = static_cast<double>(train.size());
    st.cross_entropy /= n;
    st.detection_loss /= n;
    st.certification_loss /= n;
    st.train_accuracy = static_cast<double>(correct) / n;
    st.train_alarm_rate = static_cast<double>(alarmed) / n;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.history.push_back(st);
    if (on_epoch && !on_epoch(st, result.net)) break;
  }

  if (!result.history.empty()) {
    const FinetuneEpoch& last = result.history.back();
    result.converged = last.certification_loss <= config.converge_certification &&
                       last.train_alarm_rate <= config.converge_alarm_rate;
    std::ostringstream os;
    os << (result.converged ? "converged" : "not converged") << ": final certification loss "
       << last.certification_loss << " (limit " << config.converge_certification << "), train alarm rate "
       << last.train_alarm_rate << " (limit " << config.converge_alarm_rate << ")";
    result.status = os.str();
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

TabooKey calibrate_lite(const Network& net, const TabooKey& key, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("calibrate_lite: empty dataset");
  key.check(net.spec);
  TabooKey out = key;
  std::vector<float> peak(key.masks.size(), 0.0f);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const ForwardPass pass = forward_with_cache(net, data.image(s));
    for (std::size_t l = 0; l < key.masks.size(); ++l) {
      for (std::uint32_t i : key.masks[l]) peak[l] = std::max(peak[l], pass.activations[l][i]);
    }
  }
  for (std::size_t l = 0; l < key.masks.size(); ++l) {
    if (!key.masks[l].empty()) out.thresholds[l] = peak[l];
  }
  return out;
}

Verdict detect_activations(const std::vector<Tensor>& activations, const TabooKey& key, std::size_t min_hits) {
  Verdict v;
  for (std::size_t l = 0; l < key.masks.size() && l < activations.size(); ++l) {
    const float t = key.thresholds[l];
    for (std::uint32_t i : key.masks[l]) {
      const float x = activations[l][i];
      if (x > t) {
        if (v.hits == 0) {
          v.layer = l;
          v.neuron = i;
          v.value = x;
        }
        ++v.hits;
      }
    }
  }
  v.malicious = v.hits >= std::max<std::size_t>(min_hits, 1);
  return v;
}

Verdict detect(const Network& net, const TabooKey& key, const Tensor& input, std::size_t min_hits) {
  ForwardPass pass = forward_with_cache(net, input);
  Verdict v = detect_activations(pass.activations, key, min_hits);
  v.logits = std::move(pass.logits);
  return v;
}

CertificationResult certify(const Network& net, const TabooKey& key, const Dataset& data, double epsilon,
                            const CertifyOptions& options) {
  if (epsilon < 0.0) throw std::invalid_argument("certify: epsilon must be non-negative");
  key.check(net.spec);
  const IntervalTensor natural_box = profile_input_bounds(data);
  const BoundSet natural = propagate_bounds(net, natural_box);
  const BoundSet adversarial = propagate_bounds(net, widen(natural_box, static_cast<float>(epsilon)));

  std::vector<std::vector<float>> observed(key.masks.size());
  if (options.measure_empirical) {
    for (std::size_t l = 0; l < key.masks.size(); ++l) observed[l].assign(key.masks[l].size(), 0.0f);
    for (std::size_t s = 0; s < data.size(); ++s) {
      const ForwardPass pass = forward_with_cache(net, data.image(s));
      for (std::size_t l = 0; l < key.masks.size(); ++l) {
        for (std::size_t j = 0; j < key.masks[l].size(); ++j) {
          observed[l][j] = std::max(observed[l][j], pass.activations[l][key.masks[l][j]]);
        }
      }
    }
  }

  CertificationResult res;
  res.epsilon = epsilon;
  res.loose_certified = true;
  res.strict_certified = true;
  res.suboptimal_placement = true;
  res.min_loose_margin = std::numeric_limits<double>::infinity();
  res.min_strict_margin = std::numeric_limits<double>::infinity();
  res.min_empirical_margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < key.masks.size(); ++l) {
    if (key.masks[l].empty()) continue;
    LayerCertificate lc;
    lc.layer = l;
    lc.threshold = key.thresholds[l];
    for (std::size_t j = 0; j < key.masks[l].size(); ++j) {
      const std::uint32_t i = key.masks[l][j];
      NeuronMargin m;
      m.index = i;
      m.threshold = lc.threshold;
      m.natural_upper = natural.layers[l].upper[i];
      m.adversarial_lower = adversarial.layers[l].lower[i];
      m.adversarial_upper = adversarial.layers[l].upper[i];
      m.loose_margin = static_cast<double>(m.threshold) - m.natural_upper;
      m.strict_margin = static_cast<double>(m.adversarial_lower) - m.threshold;
      m.r = std::fabs(static_cast<double>(m.natural_upper) - m.threshold);
      m.empirical_margin = options.measure_empirical ? static_cast<double>(m.threshold) - observed[l][j]
                                                     : std::numeric_limits<double>::quiet_NaN();
      res.loose_certified = res.loose_certified && m.loose_margin >= 0.0;
      res.strict_certified = res.strict_certified && m.loose_margin >= 0.0 && m.strict_margin >= 0.0;
      res.suboptimal_placement = res.suboptimal_placement && m.loose_margin >= 0.0 && m.adversarial_upper >= m.threshold;
      res.min_loose_margin = std::min(res.min_loose_margin, m.loose_margin);
      res.min_strict_margin = std::min(res.min_strict_margin, m.strict_margin);
      if (options.measure_empirical) res.min_empirical_margin = std::min(res.min_empirical_margin, m.empirical_margin);
      lc.neurons.push_back(m);
    }
    res.layers.push_back(std::move(lc));
  }
  if (res.layers.empty()) {
    res.min_loose_margin = res.min_strict_margin = res.min_empirical_margin = 0.0;
  }
  return res;
}

}  // namespace ctt

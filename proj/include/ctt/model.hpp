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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctt/data.hpp"
#include "ctt/interval.hpp"
#include "ctt/kernels.hpp"
#include "ctt/tensor.hpp"

namespace ctt {

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_size = 0;   // conv: input channels; fc: input features
  std::size_t out_size = 0;  // conv: output channels; fc: output features
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                        std::size_t padding = 0) {
    return {LayerKind::conv, in, out, kernel, stride, padding};
  }
  static LayerSpec fc(std::size_t in, std::size_t out) { return {LayerKind::fc, in, out, 0, 1, 0}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 1, 0}; }
  static LayerSpec maxpool() { return {LayerKind::maxpool, 0, 0, 0, 1, 0}; }

  bool has_parameters() const { return kind == LayerKind::conv || kind == LayerKind::fc; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  std::string name;
  Shape input_shape;  // [C,H,W]
  std::vector<LayerSpec> layers;

  // conv 1->6 5x5 pad 2, relu, maxpool, conv 6->16 5x5, relu, maxpool,
  // fc 400->120, relu, fc 120->84, relu, fc 84->10 on 1x28x28 inputs.
  static ModelSpec lenet5();
  // conv 1->2 3x3, relu, fc -> classes.
  static ModelSpec tiny(std::size_t height = 28, std::size_t width = 28, std::size_t classes = 2);
  static ModelSpec preset(const std::string& name);

  // Output shape of every layer; throws DimensionError if consecutive layers
  // disagree or the network does not end in a single fc producing logits.
  std::vector<Shape> output_shapes() const;
  std::size_t num_classes() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Per-layer weights and biases; empty tensors for layers without parameters.
struct Parameters {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  std::uint64_t seed = 0;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static Parameters initialize(const ModelSpec& spec, std::uint64_t seed);
  static Parameters zeros_like(const Parameters& other);
  void check(const ModelSpec& spec) const;
  std::size_t count() const;
  friend bool operator==(const Parameters&, const Parameters&) = default;
};

struct Network {
  ModelSpec spec;
  Parameters params;
};

struct ForwardPass {
  Tensor logits;
  std::vector<Tensor> activations;  // output of every layer, aligned with BoundSet::layers
  std::vector<LayerCache> caches;
};

ForwardPass forward_with_cache(const Network& net, const Tensor& input);
Tensor predict_logits(const Network& net, const Tensor& input);
std::size_t predict(const Network& net, const Tensor& input);

struct Gradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Tensor input;  // empty unless requested
};

// Backpropagates grad_logits (and, optionally, extra gradients injected at
// intermediate layer outputs: injected[l] is dLoss/d activations[l] or
// empty). Consumes the caches in `pass`.
Gradients backward(const Network& net, ForwardPass& pass, const Tensor& grad_logits,
                   const std::vector<Tensor>* injected = nullptr, bool need_input_grad = true);

struct RmsPropConfig {
  double lr = 1e-3;
  double rho = 0.9;
  double fuzz = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  RmsPropConfig config;
  std::vector<Tensor> weight_acc;
  std::vector<Tensor> bias_acc;

  static OptimizerState create(const Parameters& params, RmsPropConfig config);
};

// acc <- rho*acc + (1-rho)*g^2;  p <- p - lr*g/(sqrt(acc)+fuzz) - lr*wd*p
void rmsprop_step(Parameters& params, const Gradients& grads, OptimizerState& state);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = -1.0;  // -1 when no test set was supplied
  double seconds = 0.0;
};

struct TrainResult {
  Network net;
  double train_accuracy = 0.0;
  double test_accuracy = -1.0;
  double seconds = 0.0;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Plain cross-entropy training with RMSProp; deterministic given config.seed.
TrainResult train_baseline(const ModelSpec& spec, const Dataset& train, const TrainConfig& config,
                           const Dataset* test = nullptr, const EpochCallback& on_epoch = {});

// Mean of per-sample gradients of cross-entropy over the batch, accumulated
// into `grads` (which must be zeroed by the caller). Returns summed loss and
// the number of correct predictions.
struct BatchStats {
  double loss_sum = 0.0;
  std::size_t correct = 0;
};
BatchStats accumulate_ce_gradients(const Network& net, const Batch& batch, Gradients& grads);

void scale_gradients(Gradients& grads, float factor);

double accuracy(const Network& net, const Dataset& data);

// Per-pixel [min, max] over every image in the dataset.
IntervalTensor profile_input_bounds(const Dataset& data);

}  // namespace ctt

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

#include "ctt/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ctt/rng.hpp"
#include "ctt/simd.hpp"

namespace ctt {

ModelSpec ModelSpec::lenet5() {
  ModelSpec s;
  s.name = "lenet5";
  s.input_shape = {1, 28, 28};
  s.layers = {LayerSpec::conv(1, 6, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(),
              LayerSpec::conv(6, 16, 5),      LayerSpec::relu(), LayerSpec::maxpool(),
              LayerSpec::fc(400, 120),        LayerSpec::relu(), LayerSpec::fc(120, 84),
              LayerSpec::relu(),              LayerSpec::fc(84, 10)};
  return s;
}

ModelSpec ModelSpec::tiny(std::size_t height, std::size_t width, std::size_t classes) {
  ModelSpec s;
  s.name = "tiny";
  s.input_shape = {1, height, width};
  s.layers = {LayerSpec::conv(1, 2, 3), LayerSpec::relu(), LayerSpec::fc(2 * (height - 2) * (width - 2), classes)};
  return s;
}

ModelSpec ModelSpec::preset(const std::string& name) {
  if (name == "lenet5") return lenet5();
  if (name == "tiny") return tiny();
  throw std::invalid_argument("unknown architecture preset '" + name + "' (expected lenet5 or tiny)");
}

std::vector<Shape> ModelSpec::output_shapes() const {
  if (input_shape.size() != 3) throw DimensionError("model input: expected [C,H,W], got " + shape_string(input_shape));
  if (layers.empty() || layers.back().kind != LayerKind::fc) {
    throw DimensionError("model '" + name + "' must end in an fc layer producing class logits");
  }
  std::vector<Shape> shapes;
  Shape cur = input_shape;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& ls = layers[l];
    const std::string where = "layer " + std::to_string(l) + " (" + layer_kind_name(ls.kind) + ")";
    switch (ls.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3) throw DimensionError(where + ": conv needs a [C,H,W] input, got " + shape_string(cur));
        if (cur[0] != ls.in_size) {
          throw DimensionError(where + ": input channel axis 0 is " + std::to_string(cur[0]) + ", layer expects " +
                               std::to_string(ls.in_size));
        }
        const ConvGeometry g = conv_geometry(cur, {ls.out_size, ls.in_size, ls.kernel, ls.kernel}, ls.stride, ls.padding);
        cur = {ls.out_size, g.out_height, g.out_width};
        break;
      }
      case LayerKind::fc:
        if (shape_size(cur) != ls.in_size) {
          throw DimensionError(where + ": input has " + std::to_string(shape_size(cur)) + " features, layer expects " +
                               std::to_string(ls.in_size));
        }
        cur = {ls.out_size};
        break;
      case LayerKind::maxpool:
        if (cur.size() != 3 || cur[1] % 2 != 0 || cur[2] % 2 != 0) {
          throw DimensionError(where + ": maxpool needs even spatial axes, got " + shape_string(cur));
        }
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::relu:
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

std::size_t ModelSpec::num_classes() const { return output_shapes().back()[0]; }

Parameters Parameters::initialize(const ModelSpec& spec, std::uint64_t seed) {
  spec.output_shapes();
  Parameters p;
  p.seed = seed;
  Rng rng(seed);
  for (const LayerSpec& ls : spec.layers) {
    Tensor w, b;
    if (ls.kind == LayerKind::conv) {
      w = Tensor({ls.out_size, ls.in_size, ls.kernel, ls.kernel});
      b = Tensor({ls.out_size});
    } else if (ls.kind == LayerKind::fc) {
      w = Tensor({ls.out_size, ls.in_size});
      b = Tensor({ls.out_size});
    }
    if (!w.empty()) {
      const double fan_in = static_cast<double>(w.size() / w.dim(0));
      const double bound = 1.0 / std::sqrt(fan_in);
      for (float& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
      for (float& v : b.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

Parameters Parameters::zeros_like(const Parameters& other) {
  Parameters p;
  p.seed = other.seed;
  for (const Tensor& w : other.weights) p.weights.push_back(w.empty() ? Tensor() : Tensor(w.shape()));
  for (const Tensor& b : other.biases) p.biases.push_back(b.empty() ? Tensor() : Tensor(b.shape()));
  return p;
}

void Parameters::check(const ModelSpec& spec) const {
  const Parameters expected = zeros_like(initialize(spec, 0));
  if (weights.size() != spec.layers.size() || biases.size() != spec.layers.size()) {
    throw DimensionError("parameters cover " + std::to_string(weights.size()) + " layers, model has " +
                         std::to_string(spec.layers.size()));
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].shape() != expected.weights[l].shape() || biases[l].shape() != expected.biases[l].shape()) {
      throw DimensionError("layer " + std::to_string(l) + " parameters have shape " + shape_string(weights[l].shape()) +
                           "/" + shape_string(biases[l].shape()) + ", expected " +
                           shape_string(expected.weights[l].shape()) + "/" + shape_string(expected.biases[l].shape()));
    }
  }
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const Tensor& w : weights) n += w.size();
  for (const Tensor& b : biases) n += b.size();
  return n;
}

ForwardPass forward_with_cache(const Network& net, const Tensor& input) {
  if (input.shape() != net.spec.input_shape) {
    require_shape(input, net.spec.input_shape, "model input");
  }
  ForwardPass pass;
  pass.activations.reserve(net.spec.layers.size());
  pass.caches.reserve(net.spec.layers.size());
  const Tensor* x = &input;
  for (std::size_t l = 0; l < net.spec.layers.size(); ++l) {
    const LayerSpec& ls = net.spec.layers[l];
    ForwardOut out;
    switch (ls.kind) {
      case LayerKind::conv:
        out = conv2d(*x, net.params.weights[l], net.params.biases[l], ls.stride, ls.padding);
        break;
      case LayerKind::fc:
        out = fully_connected(*x, net.params.weights[l], net.params.biases[l]);
        break;
      case LayerKind::relu:
        out = relu(*x);
        break;
      case LayerKind::maxpool:
        out = maxpool2x2(*x);
        break;
    }
    out.cache.layer = l;
    pass.activations.push_back(std::move(out.output));
    pass.caches.push_back(std::move(out.cache));
    x = &pass.activations.back();
  }
  pass.logits = pass.activations.back();
  return pass;
}

Tensor predict_logits(const Network& net, const Tensor& input) { return forward_with_cache(net, input).logits; }

std::size_t predict(const Network& net, const Tensor& input) { return argmax(predict_logits(net, input)); }

Gradients backward(const Network& net, ForwardPass& pass, const Tensor& grad_logits,
                   const std::vector<Tensor>* injected, bool need_input_grad) {
  const std::size_t depth = net.spec.layers.size();
  if (pass.caches.size() != depth) {
    throw StaleCacheError("forward pass holds " + std::to_string(pass.caches.size()) + " caches, model has " +
                          std::to_string(depth) + " layers");
  }
  if (injected != nullptr && injected->size() != depth) {
    throw DimensionError("injected gradients cover " + std::to_string(injected->size()) + " layers, model has " +
                         std::to_string(depth));
  }
  require_shape(grad_logits, pass.logits.shape(), "grad_logits");
  const auto& kt = simd::active();

  Gradients grads;
  grads.weights.resize(depth);
  grads.biases.resize(depth);
  Tensor grad = grad_logits;
  for (std::size_t l = depth; l-- > 0;) {
    if (injected != nullptr && !(*injected)[l].empty()) {
      require_shape((*injected)[l], pass.activations[l].shape(), "injected gradient");
      kt.axpy(grad.data(), 1.0f, (*injected)[l].data(), grad.size());
    }
    LayerCache& cache = pass.caches[l];
    if (cache.layer != l) throw StaleCacheError("cache for layer " + std::to_string(cache.layer) + " found at slot " + std::to_string(l));
    const bool want_input = l > 0 || need_input_grad;
    switch (net.spec.layers[l].kind) {
      case LayerKind::conv: {
        AffineGrads g = conv2d_backward(cache, grad, want_input);
        grads.weights[l] = std::move(g.weights);
        grads.biases[l] = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::fc: {
        AffineGrads g = fully_connected_backward(cache, grad, want_input);
        grads.weights[l] = std::move(g.weights);
        grads.biases[l] = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::relu:
        grad = relu_backward(cache, grad);
        break;
      case LayerKind::maxpool:
        grad = maxpool2x2_backward(cache, grad);
        break;
    }
  }
  if (need_input_grad) grads.input = std::move(grad);
  return grads;
}

OptimizerState OptimizerState::create(const Parameters& params, RmsPropConfig config) {
  OptimizerState s;
  s.config = config;
  const Parameters z = Parameters::zeros_like(params);
  s.weight_acc = z.weights;
  s.bias_acc = z.biases;
  return s;
}

namespace {

void rmsprop_tensor(Tensor& param, const Tensor& grad, Tensor& acc, const RmsPropConfig& c) {
  if (param.empty()) return;
  require_shape(grad, param.shape(), "rmsprop gradient");
  const double rho = c.rho;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double a = rho * acc[i] + (1.0 - rho) * g * g;
    acc[i] = static_cast<float>(a);
    const double p = param[i];
    param[i] = static_cast<float>(p - c.lr * g / (std::sqrt(a) + c.fuzz) - c.lr * c.weight_decay * p);
  }
}

}  // namespace

void rmsprop_step(Parameters& params, const Gradients& grads, OptimizerState& state) {
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    rmsprop_tensor(params.weights[l], grads.weights[l], state.weight_acc[l], state.config);
    rmsprop_tensor(params.biases[l], grads.biases[l], state.bias_acc[l], state.config);
  }
}

void scale_gradients(Gradients& grads, float factor) {
  for (Tensor& t : grads.weights) {
    for (float& v : t.values()) v *= factor;
  }
  for (Tensor& t : grads.biases) {
    for (float& v : t.values()) v *= factor;
  }
}

BatchStats accumulate_ce_gradients(const Network& net, const Batch& batch, Gradients& grads) {
  const auto& kt = simd::active();
  BatchStats stats;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    ForwardPass pass = forward_with_cache(net, batch.images.slice(i));
    const CrossEntropy ce = softmax_cross_entropy(pass.logits, batch.labels[i]);
    stats.loss_sum += ce.loss;
    if (argmax(pass.logits) == batch.labels[i]) ++stats.correct;
    const Gradients g = backward(net, pass, ce.grad_logits, nullptr, false);
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
      if (g.weights[l].empty()) continue;
      kt.axpy(grads.weights[l].data(), 1.0f, g.weights[l].data(), g.weights[l].size());
      kt.axpy(grads.biases[l].data(), 1.0f, g.biases[l].data(), g.biases[l].size());
    }
  }
  return stats;
}

double accuracy(const Network& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict(net, data.image(i)) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_baseline(const ModelSpec& spec, const Dataset& train, const TrainConfig& config,
                           const Dataset* test, const EpochCallback& on_epoch) {
  if (train.size() == 0) throw std::invalid_argument("train_baseline: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  result.net.spec = spec;
  result.net.params = Parameters::initialize(spec, config.seed);
  RmsPropConfig rc;
  rc.lr = config.lr;
  OptimizerState opt = OptimizerState::create(result.net.params, rc);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    BatchIterator batches(train, config.batch_size, Rng::derive(config.seed, epoch).next(), true);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    while (!batches.done()) {
      const Batch batch = batches.next();
      Gradients grads;
      const Parameters zero = Parameters::zeros_like(result.net.params);
      grads.weights = zero.weights;
      grads.biases = zero.biases;
      const BatchStats s = accumulate_ce_gradients(result.net, batch, grads);
      loss_sum += s.loss_sum;
      correct += s.correct;
      scale_gradients(grads, 1.0f / static_cast<float>(batch.labels.size()));
      rmsprop_step(result.net.params, grads, opt);
    }
    EpochStats st;
    st.epoch = epoch;
    st.mean_loss = loss_sum / static_cast<double>(train.size());
    st.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (test != nullptr) st.test_accuracy = accuracy(result.net, *test);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.history.push_back(st);
    result.train_accuracy = st.train_accuracy;
    result.test_accuracy = st.test_accuracy;
    if (on_epoch) on_epoch(st);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

IntervalTensor profile_input_bounds(const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("profile_input_bounds: empty dataset");
  Tensor lo = data.image(0);
  Tensor hi = lo;
  const std::size_t n = lo.size();
  for (std::size_t i = 1; i < data.size(); ++i) {
    const float* img = data.images.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      lo[j] = std::min(lo[j], img[j]);
      hi[j] = std::max(hi[j], img[j]);
    }
  }
  return IntervalTensor(std::move(lo), std::move(hi));
}

}  // namespace ctt

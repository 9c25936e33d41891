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

#include "ctt/interval.hpp"

#include <algorithm>
#include <cmath>

#include "ctt/model.hpp"
#include "ctt/simd.hpp"

namespace ctt {
namespace {

void require_ordered(const Tensor& lo, const Tensor& hi) {
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(lo[i] <= hi[i])) {
      throw EmptyIntervalError("empty interval at index " + std::to_string(i) + ": lower " + std::to_string(lo[i]) +
                                   " > upper " + std::to_string(hi[i]),
                               i);
    }
  }
}

struct CenterRadius {
  Tensor center;
  Tensor radius;
};

CenterRadius to_center_radius(const IntervalTensor& box) {
  CenterRadius cr{Tensor(box.shape()), Tensor(box.shape())};
  for (std::size_t i = 0; i < box.size(); ++i) {
    const float lo = box.lower[i], hi = box.upper[i];
    cr.center[i] = lo == hi ? lo : 0.5f * (lo + hi);
    cr.radius[i] = lo == hi ? 0.0f : 0.5f * (hi - lo);
  }
  return cr;
}

// lower = c - r, upper = c + r; r >= 0 keeps the result ordered.
IntervalTensor from_center_radius(const Tensor& c, const Tensor& r) {
  Tensor lo(c.shape()), hi(c.shape());
  for (std::size_t i = 0; i < c.size(); ++i) {
    lo[i] = c[i] - r[i];
    hi[i] = c[i] + r[i];
  }
  IntervalTensor out;
  out.lower = std::move(lo);
  out.upper = std::move(hi);
  return out;
}

Tensor absolute(const Tensor& w) {
  Tensor a = w;
  for (float& v : a.values()) v = std::fabs(v);
  return a;
}

ForwardOut affine_forward(const Tensor& x, const Tensor& w, const Tensor& b, AffineKind kind, std::size_t stride,
                          std::size_t padding) {
  return kind == AffineKind::conv ? conv2d(x, w, b, stride, padding) : fully_connected(x, w, b);
}

}  // namespace

IntervalTensor::IntervalTensor(Tensor lo, Tensor hi) : lower(std::move(lo)), upper(std::move(hi)) {
  require_shape(upper, lower.shape(), "interval upper bound");
  require_ordered(lower, upper);
}

bool IntervalTensor::contains(const Tensor& x, float tolerance) const {
  if (x.shape() != shape()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < lower[i] - tolerance || x[i] > upper[i] + tolerance) return false;
  }
  return true;
}

bool IntervalTensor::contains(const IntervalTensor& inner, float tolerance) const {
  if (inner.shape() != shape()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (inner.lower[i] < lower[i] - tolerance || inner.upper[i] > upper[i] + tolerance) return false;
  }
  return true;
}

double IntervalTensor::max_width() const {
  double w = 0.0;
  for (std::size_t i = 0; i < size(); ++i) w = std::max(w, static_cast<double>(upper[i]) - lower[i]);
  return w;
}

IntervalTensor epsilon_box(const Tensor& x, float eps) {
  if (eps < 0.0f) throw std::invalid_argument("epsilon_box: negative epsilon");
  Tensor lo = x, hi = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo[i] = std::max(x[i] - eps, 0.0f);
    hi[i] = std::min(x[i] + eps, 1.0f);
  }
  return IntervalTensor(std::move(lo), std::move(hi));
}

IntervalTensor widen(const IntervalTensor& box, float eps) {
  if (eps < 0.0f) throw std::invalid_argument("widen: negative epsilon");
  Tensor lo = box.lower, hi = box.upper;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    lo[i] = std::max(lo[i] - eps, 0.0f);
    hi[i] = std::min(hi[i] + eps, 1.0f);
  }
  return IntervalTensor(std::move(lo), std::move(hi));
}

IntervalTensor interval_affine(const IntervalTensor& input, const Tensor& weights, const Tensor& bias,
                               AffineKind kind, std::size_t stride, std::size_t padding) {
  const CenterRadius cr = to_center_radius(input);
  const Tensor abs_w = absolute(weights);
  const Tensor zero_bias(bias.shape());
  const ForwardOut c = affine_forward(cr.center, weights, bias, kind, stride, padding);
  const ForwardOut r = affine_forward(cr.radius, abs_w, zero_bias, kind, stride, padding);
  return from_center_radius(c.output, r.output);
}

IntervalTensor interval_relu(const IntervalTensor& input) {
  IntervalTensor out = input;
  for (float& v : out.lower.values()) v = std::max(v, 0.0f);
  for (float& v : out.upper.values()) v = std::max(v, 0.0f);
  return out;
}

IntervalTensor interval_maxpool(const IntervalTensor& input) {
  IntervalTensor out;
  out.lower = maxpool2x2(input.lower).output;
  out.upper = maxpool2x2(input.upper).output;
  return out;
}

IntervalTensor interval_intersect(const IntervalTensor& a, const IntervalTensor& b) {
  require_shape(b.lower, a.shape(), "interval_intersect");
  Tensor lo(a.shape()), hi(a.shape());
  for (std::size_t i = 0; i < lo.size(); ++i) {
    lo[i] = std::max(a.lower[i], b.lower[i]);
    hi[i] = std::min(a.upper[i], b.upper[i]);
  }
  return IntervalTensor(std::move(lo), std::move(hi));
}

BoundSet propagate_bounds(const Network& net, const IntervalTensor& input_box) {
  require_shape(input_box.lower, net.spec.input_shape, "input box");
  BoundSet set;
  const IntervalTensor* x = &input_box;
  set.layers.reserve(net.spec.layers.size());
  for (std::size_t l = 0; l < net.spec.layers.size(); ++l) {
    const LayerSpec& ls = net.spec.layers[l];
    switch (ls.kind) {
      case LayerKind::conv:
        set.layers.push_back(interval_affine(*x, net.params.weights[l], net.params.biases[l], AffineKind::conv,
                                             ls.stride, ls.padding));
        break;
      case LayerKind::fc:
        set.layers.push_back(interval_affine(*x, net.params.weights[l], net.params.biases[l], AffineKind::fc));
        break;
      case LayerKind::relu:
        set.layers.push_back(interval_relu(*x));
        break;
      case LayerKind::maxpool:
        set.layers.push_back(interval_maxpool(*x));
        break;
    }
    x = &set.layers.back();
  }
  return set;
}

std::vector<Tensor> BoundPropagation::absolute_weights(const Network& net) {
  std::vector<Tensor> out;
  out.reserve(net.params.weights.size());
  for (const Tensor& w : net.params.weights) out.push_back(w.empty() ? Tensor() : absolute(w));
  return out;
}

BoundPropagation::BoundPropagation(const Network& net, const IntervalTensor& input_box, std::size_t depth,
                                   const std::vector<Tensor>* abs_weights)
    : net_(net) {
  require_shape(input_box.lower, net.spec.input_shape, "input box");
  const std::size_t n = net.spec.layers.size();
  if (depth == 0 || depth > n) depth = n;
  if (abs_weights == nullptr) {
    owned_abs_ = absolute_weights(net);
    abs_ = &owned_abs_;
  } else {
    abs_ = abs_weights;
  }
  steps_.resize(depth);
  layers_.reserve(depth);
  // Zero-bias tensors for the radius path, one per affine layer.
  const IntervalTensor* x = &input_box;
  for (std::size_t l = 0; l < depth; ++l) {
    const LayerSpec& ls = net.spec.layers[l];
    Step& step = steps_[l];
    switch (ls.kind) {
      case LayerKind::conv:
      case LayerKind::fc: {
        const AffineKind kind = ls.kind == LayerKind::conv ? AffineKind::conv : AffineKind::fc;
        const CenterRadius cr = to_center_radius(*x);
        ForwardOut c = affine_forward(cr.center, net.params.weights[l], net.params.biases[l], kind, ls.stride, ls.padding);
        const Tensor zero_bias(net.params.biases[l].shape());
        ForwardOut r = affine_forward(cr.radius, (*abs_)[l], zero_bias, kind, ls.stride, ls.padding);
        layers_.push_back(from_center_radius(c.output, r.output));
        step.first = std::move(c.cache);
        step.second = std::move(r.cache);
        break;
      }
      case LayerKind::relu: {
        ForwardOut lo = relu(x->lower);
        ForwardOut hi = relu(x->upper);
        IntervalTensor out;
        out.lower = std::move(lo.output);
        out.upper = std::move(hi.output);
        layers_.push_back(std::move(out));
        step.first = std::move(lo.cache);
        step.second = std::move(hi.cache);
        break;
      }
      case LayerKind::maxpool: {
        ForwardOut lo = maxpool2x2(x->lower);
        ForwardOut hi = maxpool2x2(x->upper);
        IntervalTensor out;
        out.lower = std::move(lo.output);
        out.upper = std::move(hi.output);
        layers_.push_back(std::move(out));
        step.first = std::move(lo.cache);
        step.second = std::move(hi.cache);
        break;
      }
    }
    step.first.layer = step.second.layer = l;
    x = &layers_.back();
  }
}

void BoundPropagation::backward(const std::vector<Tensor>& grad_lower, const std::vector<Tensor>& grad_upper,
                                std::vector<Tensor>& weight_grads, std::vector<Tensor>& bias_grads,
                                Tensor* input_lower, Tensor* input_upper) {
  const bool need_input = input_lower != nullptr || input_upper != nullptr;
  if (need_input) {
    const Shape& in = net_.spec.input_shape;
    if (input_lower) *input_lower = Tensor(in);
    if (input_upper) *input_upper = Tensor(in);
  }
  const std::size_t depth = steps_.size();
  if (grad_lower.size() < depth || grad_upper.size() < depth) {
    throw DimensionError("bound gradients cover fewer layers than were propagated");
  }
  // Find the deepest layer that receives any gradient; nothing above it matters.
  std::size_t top = depth;
  while (top > 0 && grad_lower[top - 1].empty() && grad_upper[top - 1].empty()) --top;
  if (top == 0) return;

  const auto& kt = simd::active();
  Tensor g_lo(layers_[top - 1].shape());
  Tensor g_hi(layers_[top - 1].shape());
  for (std::size_t l = top; l-- > 0;) {
    if (!grad_lower[l].empty()) kt.axpy(g_lo.data(), 1.0f, grad_lower[l].data(), g_lo.size());
    if (!grad_upper[l].empty()) kt.axpy(g_hi.data(), 1.0f, grad_upper[l].data(), g_hi.size());
    Step& step = steps_[l];
    const bool want_input = l > 0 || need_input;
    switch (net_.spec.layers[l].kind) {
      case LayerKind::conv:
      case LayerKind::fc: {
        const bool conv = net_.spec.layers[l].kind == LayerKind::conv;
        Tensor g_center = g_lo, g_radius = g_hi;
        for (std::size_t i = 0; i < g_center.size(); ++i) {
          g_center[i] = g_lo[i] + g_hi[i];
          g_radius[i] = g_hi[i] - g_lo[i];
        }
        AffineGrads gc = conv ? conv2d_backward(step.first, g_center, want_input)
                              : fully_connected_backward(step.first, g_center, want_input);
        AffineGrads gr = conv ? conv2d_backward(step.second, g_radius, want_input)
                              : fully_connected_backward(step.second, g_radius, want_input);
        // d|W|/dW = sign(W)
        const Tensor& w = net_.params.weights[l];
        Tensor& wg = weight_grads[l];
        for (std::size_t i = 0; i < w.size(); ++i) {
          const float s = w[i] > 0.0f ? 1.0f : (w[i] < 0.0f ? -1.0f : 0.0f);
          wg[i] += gc.weights[i] + s * gr.weights[i];
        }
        kt.axpy(bias_grads[l].data(), 1.0f, gc.bias.data(), gc.bias.size());
        if (want_input) {
          g_lo = Tensor(gc.input.shape());
          g_hi = Tensor(gc.input.shape());
          for (std::size_t i = 0; i < g_lo.size(); ++i) {
            g_lo[i] = 0.5f * (gc.input[i] - gr.input[i]);
            g_hi[i] = 0.5f * (gc.input[i] + gr.input[i]);
          }
        }
        break;
      }
      case LayerKind::relu:
        g_lo = relu_backward(step.first, g_lo);
        g_hi = relu_backward(step.second, g_hi);
        break;
      case LayerKind::maxpool:
        g_lo = maxpool2x2_backward(step.first, g_lo);
        g_hi = maxpool2x2_backward(step.second, g_hi);
        break;
    }
  }
  if (input_lower) *input_lower = std::move(g_lo);
  if (input_upper) *input_upper = std::move(g_hi);
}

}  // namespace ctt

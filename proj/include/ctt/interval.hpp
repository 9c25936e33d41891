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

// Box-domain abstract interpretation. An IntervalTensor is a pair of
// same-shaped tensors with lower <= upper elementwise; each layer kernel maps
// an input box to a box that contains every concrete output.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ctt/kernels.hpp"
#include "ctt/tensor.hpp"

namespace ctt {

struct Network;

class EmptyIntervalError : public std::domain_error {
 public:
  EmptyIntervalError(const std::string& what, std::size_t index) : std::domain_error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

struct IntervalTensor {
  Tensor lower;
  Tensor upper;

  IntervalTensor() = default;
  // Throws DimensionError on shape mismatch and EmptyIntervalError when
  // lower > upper anywhere.
  IntervalTensor(Tensor lo, Tensor hi);

  static IntervalTensor point(const Tensor& x) { return IntervalTensor(x, x); }

  const Shape& shape() const { return lower.shape(); }
  std::size_t size() const { return lower.size(); }
  bool contains(const Tensor& x, float tolerance = 0.0f) const;
  bool contains(const IntervalTensor& inner, float tolerance = 0.0f) const;
  double max_width() const;
};

// [max(x - eps, 0), min(x + eps, 1)]
IntervalTensor epsilon_box(const Tensor& x, float eps);
// [max(lower - eps, 0), min(upper + eps, 1)]
IntervalTensor widen(const IntervalTensor& box, float eps);

enum class AffineKind { conv, fc };

// Sound affine transform. With W+ = max(W,0) and W- = min(W,0):
//   lower' = W+ * lower + W- * upper + b,  upper' = W+ * upper + W- * lower + b,
// evaluated as center' = W*center + b, radius' = |W|*radius.
IntervalTensor interval_affine(const IntervalTensor& input, const Tensor& weights, const Tensor& bias,
                               AffineKind kind, std::size_t stride = 1, std::size_t padding = 0);
IntervalTensor interval_relu(const IntervalTensor& input);
IntervalTensor interval_maxpool(const IntervalTensor& input);
IntervalTensor interval_intersect(const IntervalTensor& a, const IntervalTensor& b);

struct BoundSet {
  enum class Tag { natural, adversarial };
  Tag tag = Tag::natural;
  double epsilon = 0.0;
  std::vector<IntervalTensor> layers;  // post-layer box of every network layer
};

BoundSet propagate_bounds(const Network& net, const IntervalTensor& input_box);

// Differentiable propagation used by fine-tuning. Holds the |W| tensors its
// caches point into, so it must outlive backward().
class BoundPropagation {
 public:
  // Propagates through layers [0, depth); depth 0 means the whole network.
  // `abs_weights`, when given, must hold |W| per layer (see absolute_weights)
  // and outlive this object; otherwise it is computed here.
  BoundPropagation(const Network& net, const IntervalTensor& input_box, std::size_t depth = 0,
                   const std::vector<Tensor>* abs_weights = nullptr);

  static std::vector<Tensor> absolute_weights(const Network& net);
  BoundPropagation(const BoundPropagation&) = delete;
  BoundPropagation& operator=(const BoundPropagation&) = delete;

  const std::vector<IntervalTensor>& layers() const { return layers_; }

  // grad_lower[l] / grad_upper[l] hold dLoss/d(bound of layer l) or are empty.
  // Accumulates parameter gradients into weight_grads / bias_grads, which must
  // be shaped like the network parameters. When given, input_lower /
  // input_upper receive dLoss/d(input box bounds).
  void backward(const std::vector<Tensor>& grad_lower, const std::vector<Tensor>& grad_upper,
                std::vector<Tensor>& weight_grads, std::vector<Tensor>& bias_grads, Tensor* input_lower = nullptr,
                Tensor* input_upper = nullptr);

 private:
  struct Step {
    LayerCache first;   // affine: W * center;   relu/maxpool: lower bound
    LayerCache second;  // affine: |W| * radius; relu/maxpool: upper bound
  };
  const Network& net_;
  std::vector<Tensor> owned_abs_;
  const std::vector<Tensor>* abs_ = nullptr;
  std::vector<Step> steps_;
  std::vector<IntervalTensor> layers_;
};

}  // namespace ctt

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

// Forward and backward kernels for the layer types used by the model presets.
// All kernels are pure functions of their arguments. Layout is NCHW without
// the batch axis: images are [C,H,W], conv weights [O,C,k,k].

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ctt/tensor.hpp"

namespace ctt {

enum class LayerKind { conv, relu, maxpool, fc };

const char* layer_kind_name(LayerKind kind);

class StaleCacheError : public std::logic_error {
 public:
  explicit StaleCacheError(const std::string& what) : std::logic_error(what) {}
};

// State saved by a forward call for exactly one matching backward call.
// `weights` is non-owning: the parameters must stay alive and unchanged until
// the backward call.
struct LayerCache {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::relu;
  Shape input_shape;
  Shape output_shape;
  Tensor saved;  // conv: im2col columns [C*k*k, H'*W']; fc: input; relu: pre-activation
  std::vector<std::uint32_t> argmax;  // maxpool: flat input index per output cell
  const Tensor* weights = nullptr;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool consumed = false;
};

struct ForwardOut {
  Tensor output;
  LayerCache cache;
};

struct AffineGrads {
  Tensor input;  // empty when not requested
  Tensor weights;
  Tensor bias;
};

struct ConvGeometry {
  std::size_t out_height = 0;
  std::size_t out_width = 0;
};

// Validates input/weight/bias extents and returns the output spatial size.
ConvGeometry conv_geometry(const Shape& input, const Shape& weights, std::size_t stride, std::size_t padding);

ForwardOut conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
                  std::size_t padding);
AffineGrads conv2d_backward(LayerCache& cache, const Tensor& grad_out, bool need_input_grad = true);

ForwardOut fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias);
AffineGrads fully_connected_backward(LayerCache& cache, const Tensor& grad_out, bool need_input_grad = true);

ForwardOut relu(const Tensor& input);
Tensor relu_backward(LayerCache& cache, const Tensor& grad_out);

ForwardOut maxpool2x2(const Tensor& input);
Tensor maxpool2x2_backward(LayerCache& cache, const Tensor& grad_out);

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad_logits;
};

// Numerically stabilized -log softmax(logits)[label] and its gradient.
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::size_t label);

// Index of the largest logit, lowest index on ties.
std::size_t argmax(const Tensor& logits);

}  // namespace ctt

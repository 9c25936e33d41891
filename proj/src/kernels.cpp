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

#include "ctt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctt/simd.hpp"

namespace ctt {
namespace {

void check_fresh(LayerCache& cache, LayerKind kind, const Tensor& grad_out) {
  if (cache.consumed) throw StaleCacheError("layer cache already consumed by a backward call");
  if (cache.kind != kind) {
    throw StaleCacheError(std::string("cache holds a ") + layer_kind_name(cache.kind) + " layer, backward is " +
                          layer_kind_name(kind));
  }
  require_shape(grad_out, cache.output_shape, "grad_out");
  cache.consumed = true;
}

// columns[(c*k + u)*k + v][i*W' + j] = padded_input[c][i*stride + u][j*stride + v]
Tensor im2col(const Tensor& input, std::size_t k, std::size_t stride, std::size_t padding,
              const ConvGeometry& g) {
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const std::size_t positions = g.out_height * g.out_width;
  Tensor columns({channels * k * k, positions});
  float* col = columns.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        float* row = col + ((c * k + u) * k + v) * positions;
        for (std::size_t i = 0; i < g.out_height; ++i) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(padding);
          float* dst = row + i * g.out_width;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + g.out_width, 0.0f);
            continue;
          }
          const float* src = input.data() + (c * height + static_cast<std::size_t>(y)) * width;
          for (std::size_t j = 0; j < g.out_width; ++j) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(padding);
            dst[j] = (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) ? 0.0f : src[x];
          }
        }
      }
    }
  }
  return columns;
}

Tensor col2im(const Tensor& columns, const Shape& input_shape, std::size_t k, std::size_t stride,
              std::size_t padding, std::size_t out_height, std::size_t out_width) {
  const std::size_t channels = input_shape[0], height = input_shape[1], width = input_shape[2];
  const std::size_t positions = out_height * out_width;
  Tensor grad(input_shape);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        const float* row = columns.data() + ((c * k + u) * k + v) * positions;
        for (std::size_t i = 0; i < out_height; ++i) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) continue;
          float* dst = grad.data() + (c * height + static_cast<std::size_t>(y)) * width;
          for (std::size_t j = 0; j < out_width; ++j) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(padding);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(width)) dst[x] += row[i * out_width + j];
          }
        }
      }
    }
  }
  return grad;
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::fc: return "fc";
  }
  return "?";
}

ConvGeometry conv_geometry(const Shape& input, const Shape& weights, std::size_t stride, std::size_t padding) {
  if (input.size() != 3) throw DimensionError("conv2d input: expected rank 3 [C,H,W], got " + shape_string(input));
  if (weights.size() != 4) {
    throw DimensionError("conv2d weights: expected rank 4 [O,C,k,k], got " + shape_string(weights));
  }
  if (weights[1] != input[0]) {
    throw DimensionError("conv2d: input channel axis 0 has extent " + std::to_string(input[0]) +
                         " but weights axis 1 expects " + std::to_string(weights[1]));
  }
  if (weights[2] != weights[3]) {
    throw DimensionError("conv2d weights: kernel axes 2 and 3 differ (" + shape_string(weights) + ")");
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t k = weights[2];
  auto out_extent = [&](std::size_t extent, const char* axis) {
    const std::size_t padded = extent + 2 * padding;
    if (padded < k || (padded - k) % stride != 0) {
      throw DimensionError(std::string("conv2d: ") + axis + " extent " + std::to_string(extent) + " with padding " +
                           std::to_string(padding) + ", kernel " + std::to_string(k) + ", stride " +
                           std::to_string(stride) + " gives a non-integral output size");
    }
    return (padded - k) / stride + 1;
  };
  return {out_extent(input[1], "height (axis 1)"), out_extent(input[2], "width (axis 2)")};
}

ForwardOut conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
                  std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), weights.shape(), stride, padding);
  const std::size_t out_channels = weights.dim(0);
  require_shape(bias, {out_channels}, "conv2d bias");
  const std::size_t k = weights.dim(2);
  const std::size_t inner = weights.dim(1) * k * k;
  const std::size_t positions = g.out_height * g.out_width;

  ForwardOut out;
  out.cache.kind = LayerKind::conv;
  out.cache.input_shape = input.shape();
  out.cache.output_shape = {out_channels, g.out_height, g.out_width};
  out.cache.weights = &weights;
  out.cache.stride = stride;
  out.cache.padding = padding;
  out.cache.saved = im2col(input, k, stride, padding, g);
  out.output = Tensor(out.cache.output_shape);

  const auto& kt = simd::active();
  for (std::size_t o = 0; o < out_channels; ++o) {
    kt.combine_rows(out.output.data() + o * positions, weights.data() + o * inner, out.cache.saved.data(), inner,
                    positions, positions, bias[o]);
  }
  return out;
}

AffineGrads conv2d_backward(LayerCache& cache, const Tensor& grad_out, bool need_input_grad) {
  check_fresh(cache, LayerKind::conv, grad_out);
  const Tensor& weights = *cache.weights;
  const std::size_t out_channels = weights.dim(0);
  const std::size_t k = weights.dim(2);
  const std::size_t inner = weights.dim(1) * k * k;
  const std::size_t out_h = cache.output_shape[1], out_w = cache.output_shape[2];
  const std::size_t positions = out_h * out_w;
  const auto& kt = simd::active();
  const Tensor& columns = cache.saved;

  AffineGrads grads;
  grads.weights = Tensor(weights.shape());
  grads.bias = Tensor({out_channels});
  for (std::size_t o = 0; o < out_channels; ++o) {
    const float* g = grad_out.data() + o * positions;
    double bsum = 0.0;
    for (std::size_t p = 0; p < positions; ++p) bsum += g[p];
    grads.bias[o] = static_cast<float>(bsum);
    for (std::size_t r = 0; r < inner; ++r) {
      grads.weights[o * inner + r] = static_cast<float>(kt.dot(g, columns.data() + r * positions, positions));
    }
  }

  if (need_input_grad) {
    // grad_columns[r][p] = sum_o W[o][r] * grad_out[o][p]
    std::vector<float> wt(inner * out_channels);
    for (std::size_t o = 0; o < out_channels; ++o) {
      for (std::size_t r = 0; r < inner; ++r) wt[r * out_channels + o] = weights[o * inner + r];
    }
    Tensor grad_columns({inner, positions});
    for (std::size_t r = 0; r < inner; ++r) {
      kt.combine_rows(grad_columns.data() + r * positions, wt.data() + r * out_channels, grad_out.data(),
                      out_channels, positions, positions, 0.0f);
    }
    grads.input = col2im(grad_columns, cache.input_shape, k, cache.stride, cache.padding, out_h, out_w);
  }
  cache.saved = Tensor();
  return grads;
}

ForwardOut fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(weights, 2, "fully_connected weights");
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (input.size() != n) {
    throw DimensionError("fully_connected: input has " + std::to_string(input.size()) +
                         " features but weights axis 1 expects " + std::to_string(n));
  }
  require_shape(bias, {m}, "fully_connected bias");
  ForwardOut out;
  out.cache.kind = LayerKind::fc;
  out.cache.input_shape = input.shape();
  out.cache.output_shape = {m};
  out.cache.weights = &weights;
  out.cache.saved = input;
  out.output = Tensor({m});
  const auto& kt = simd::active();
  for (std::size_t i = 0; i < m; ++i) {
    out.output[i] = static_cast<float>(bias[i] + kt.dot(weights.data() + i * n, input.data(), n));
  }
  return out;
}

AffineGrads fully_connected_backward(LayerCache& cache, const Tensor& grad_out, bool need_input_grad) {
  check_fresh(cache, LayerKind::fc, grad_out);
  const Tensor& weights = *cache.weights;
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  const auto& kt = simd::active();
  AffineGrads grads;
  grads.weights = Tensor(weights.shape());
  grads.bias = grad_out;
  for (std::size_t i = 0; i < m; ++i) {
    if (grad_out[i] != 0.0f) kt.axpy(grads.weights.data() + i * n, grad_out[i], cache.saved.data(), n);
  }
  if (need_input_grad) {
    grads.input = Tensor(cache.input_shape);
    kt.combine_rows(grads.input.data(), grad_out.data(), weights.data(), m, n, n, 0.0f);
  }
  cache.saved = Tensor();
  return grads;
}

ForwardOut relu(const Tensor& input) {
  ForwardOut out;
  out.cache.kind = LayerKind::relu;
  out.cache.input_shape = input.shape();
  out.cache.output_shape = input.shape();
  out.cache.saved = input;
  out.output = input;
  for (float& v : out.output.values()) v = std::max(v, 0.0f);
  return out;
}

Tensor relu_backward(LayerCache& cache, const Tensor& grad_out) {
  check_fresh(cache, LayerKind::relu, grad_out);
  Tensor grad = grad_out;
  const Tensor& pre = cache.saved;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(pre[i] > 0.0f)) grad[i] = 0.0f;
  }
  cache.saved = Tensor();
  return grad;
}

ForwardOut maxpool2x2(const Tensor& input) {
  require_rank(input, 3, "maxpool2x2 input");
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  if (height % 2 != 0) throw DimensionError("maxpool2x2: height (axis 1) extent " + std::to_string(height) + " is odd");
  if (width % 2 != 0) throw DimensionError("maxpool2x2: width (axis 2) extent " + std::to_string(width) + " is odd");
  const std::size_t oh = height / 2, ow = width / 2;
  ForwardOut out;
  out.cache.kind = LayerKind::maxpool;
  out.cache.input_shape = input.shape();
  out.cache.output_shape = {channels, oh, ow};
  out.output = Tensor(out.cache.output_shape);
  out.cache.argmax.resize(channels * oh * ow);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        // Scan order is row-major inside the window so ties keep the lowest flat index.
        std::size_t best = (c * height + 2 * i) * width + 2 * j;
        for (std::size_t u = 0; u < 2; ++u) {
          for (std::size_t v = 0; v < 2; ++v) {
            const std::size_t idx = (c * height + 2 * i + u) * width + 2 * j + v;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (c * oh + i) * ow + j;
        out.output[o] = input[best];
        out.cache.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

Tensor maxpool2x2_backward(LayerCache& cache, const Tensor& grad_out) {
  check_fresh(cache, LayerKind::maxpool, grad_out);
  Tensor grad(cache.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) grad[cache.argmax[o]] += grad_out[o];
  cache.argmax.clear();
  return grad;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(logits.size()) + ")");
  }
  double peak = logits[0];
  for (float z : logits.values()) peak = std::max(peak, static_cast<double>(z));
  double total = 0.0;
  for (float z : logits.values()) total += std::exp(static_cast<double>(z) - peak);
  const double log_total = std::log(total);
  CrossEntropy ce;
  ce.loss = log_total - (static_cast<double>(logits[label]) - peak);
  ce.grad_logits = Tensor(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::exp(static_cast<double>(logits[i]) - peak - log_total);
    ce.grad_logits[i] = static_cast<float>(p - (i == label ? 1.0 : 0.0));
  }
  return ce;
}

std::size_t argmax(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

}  // namespace ctt

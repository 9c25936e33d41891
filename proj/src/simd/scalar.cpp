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

#include "ctt/simd.hpp"

namespace ctt::simd {
namespace {

double dot_scalar(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

void combine_rows_scalar(float* out, const float* coeffs, const float* rows, std::size_t count,
                         std::size_t stride, std::size_t n, float bias) {
  for (std::size_t p = 0; p < n; ++p) {
    double acc = bias;
    for (std::size_t k = 0; k < count; ++k) {
      acc += static_cast<double>(coeffs[k]) * static_cast<double>(rows[k * stride + p]);
    }
    out[p] = static_cast<float>(acc);
  }
}

void axpy_scalar(float* y, float alpha, const float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", dot_scalar, combine_rows_scalar, axpy_scalar};
  return table;
}

}  // namespace ctt::simd

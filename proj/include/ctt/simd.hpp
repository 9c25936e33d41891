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

// Inner-loop arithmetic shared by every layer kernel. Storage is float32,
// every reduction accumulates in float64. A scalar reference table is always
// available; vector tables are picked at runtime from the CPU feature set.

#include <cstddef>
#include <string_view>

namespace ctt::simd {

struct KernelTable {
  const char* name;

  // sum_i a[i] * b[i]
  double (*dot)(const float* a, const float* b, std::size_t n);

  // out[p] = bias + sum_{k < count} coeffs[k] * rows[k * stride + p], p < n
  void (*combine_rows)(float* out, const float* coeffs, const float* rows, std::size_t count,
                       std::size_t stride, std::size_t n, float bias);

  // y[i] += alpha * x[i]
  void (*axpy)(float* y, float alpha, const float* x, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the build or the host CPU lacks the instruction set.
const KernelTable* avx2_kernels();

// Table used by the layer kernels. Chosen once at first use: the widest table
// the CPU supports unless CTT_SIMD=scalar|avx2 overrides it.
const KernelTable& active();

// Switches the active table by name; returns false when unavailable. Meant
// for equivalence tests and benchmarks.
bool select(std::string_view name);

}  // namespace ctt::simd

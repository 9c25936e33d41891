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

// Compiled with -mavx2 -mfma. Nothing here may run before the dispatcher has
// confirmed both features on the host.

#include "ctt/simd.hpp"

#include <immintrin.h>

namespace ctt::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline __m256d widen_lo(__m256 v) { return _mm256_cvtps_pd(_mm256_castps256_ps128(v)); }
inline __m256d widen_hi(__m256 v) { return _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)); }

double dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const __m256 a0 = _mm256_loadu_ps(a + i);
    const __m256 b0 = _mm256_loadu_ps(b + i);
    const __m256 a1 = _mm256_loadu_ps(a + i + 8);
    const __m256 b1 = _mm256_loadu_ps(b + i + 8);
    acc0 = _mm256_fmadd_pd(widen_lo(a0), widen_lo(b0), acc0);
    acc1 = _mm256_fmadd_pd(widen_hi(a0), widen_hi(b0), acc1);
    acc2 = _mm256_fmadd_pd(widen_lo(a1), widen_lo(b1), acc2);
    acc3 = _mm256_fmadd_pd(widen_hi(a1), widen_hi(b1), acc3);
  }
  for (; i + 8 <= n; i += 8) {
    const __m256 a0 = _mm256_loadu_ps(a + i);
    const __m256 b0 = _mm256_loadu_ps(b + i);
    acc0 = _mm256_fmadd_pd(widen_lo(a0), widen_lo(b0), acc0);
    acc1 = _mm256_fmadd_pd(widen_hi(a0), widen_hi(b0), acc1);
  }
  double s = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

void combine_rows_avx2(float* out, const float* coeffs, const float* rows, std::size_t count,
                       std::size_t stride, std::size_t n, float bias) {
  const __m256d b = _mm256_set1_pd(bias);
  std::size_t p = 0;
  for (; p + 16 <= n; p += 16) {
    __m256d acc0 = b, acc1 = b, acc2 = b, acc3 = b;
    const float* r = rows + p;
    for (std::size_t k = 0; k < count; ++k, r += stride) {
      const __m256d c = _mm256_set1_pd(coeffs[k]);
      const __m256 v0 = _mm256_loadu_ps(r);
      const __m256 v1 = _mm256_loadu_ps(r + 8);
      acc0 = _mm256_fmadd_pd(c, widen_lo(v0), acc0);
      acc1 = _mm256_fmadd_pd(c, widen_hi(v0), acc1);
      acc2 = _mm256_fmadd_pd(c, widen_lo(v1), acc2);
      acc3 = _mm256_fmadd_pd(c, widen_hi(v1), acc3);
    }
    const __m256 lo = _mm256_set_m128(_mm256_cvtpd_ps(acc1), _mm256_cvtpd_ps(acc0));
    const __m256 hi = _mm256_set_m128(_mm256_cvtpd_ps(acc3), _mm256_cvtpd_ps(acc2));
    _mm256_storeu_ps(out + p, lo);
    _mm256_storeu_ps(out + p + 8, hi);
  }
  for (; p + 4 <= n; p += 4) {
    __m256d acc = b;
    const float* r = rows + p;
    for (std::size_t k = 0; k < count; ++k, r += stride) {
      acc = _mm256_fmadd_pd(_mm256_set1_pd(coeffs[k]), _mm256_cvtps_pd(_mm_loadu_ps(r)), acc);
    }
    _mm_storeu_ps(out + p, _mm256_cvtpd_ps(acc));
  }
  for (; p < n; ++p) {
    double acc = bias;
    for (std::size_t k = 0; k < count; ++k) {
      acc += static_cast<double>(coeffs[k]) * static_cast<double>(rows[k * stride + p]);
    }
    out[p] = static_cast<float>(acc);
  }
}

void axpy_avx2(float* y, float alpha, const float* x, std::size_t n) {
  const __m256 a = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_mul_ps(a, _mm256_loadu_ps(x + i))));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{"avx2", dot_avx2, combine_rows_avx2, axpy_avx2};
  return table;
}

}  // namespace ctt::simd

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "ctt/kernels.hpp"
#include "ctt/model.hpp"
#include "ctt/rng.hpp"
#include "ctt/simd.hpp"

using namespace ctt;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-2.0, 2.0));
  return v;
}

const std::size_t kSizes[] = {0, 1, 3, 4, 5, 7, 8, 15, 16, 17, 31, 33, 63, 64, 65, 100, 784, 1001};

struct Restore {
  ~Restore() { simd::select(simd::avx2_kernels() ? "avx2" : "scalar"); }
};

}  // namespace

TEST_CASE("scalar table is always available") {
  CHECK(std::string(simd::scalar_kernels().name) == "scalar");
  CHECK(simd::select("scalar"));
  CHECK(std::string(simd::active().name) == "scalar");
  CHECK_FALSE(simd::select("sse9"));
  Restore r;
}

TEST_CASE("avx2 dot equals scalar dot") {
  const simd::KernelTable* v = simd::avx2_kernels();
  if (v == nullptr) {
    MESSAGE("host lacks AVX2; equivalence not exercised");
    return;
  }
  const simd::KernelTable& s = simd::scalar_kernels();
  Rng rng(1);
  for (std::size_t n : kSizes) {
    const auto a = random_vec(n, rng), b = random_vec(n, rng);
    const double want = s.dot(a.data(), b.data(), n);
    const double got = v->dot(a.data(), b.data(), n);
    CHECK(std::fabs(got - want) <= 1e-12 * (1.0 + std::fabs(want)));
  }
}

TEST_CASE("avx2 combine_rows equals scalar combine_rows") {
  const simd::KernelTable* v = simd::avx2_kernels();
  if (v == nullptr) return;
  const simd::KernelTable& s = simd::scalar_kernels();
  Rng rng(2);
  for (std::size_t n : kSizes) {
    for (std::size_t count : {std::size_t{1}, std::size_t{3}, std::size_t{25}}) {
      const std::size_t stride = n + 3;
      const auto rows = random_vec(count * stride, rng), coeffs = random_vec(count, rng);
      std::vector<float> want(n + 1, -7.0f), got(n + 1, -7.0f);
      s.combine_rows(want.data(), coeffs.data(), rows.data(), count, stride, n, 0.5f);
      v->combine_rows(got.data(), coeffs.data(), rows.data(), count, stride, n, 0.5f);
      for (std::size_t p = 0; p < n; ++p) CHECK(std::fabs(got[p] - want[p]) <= 1e-6f * (1.0f + std::fabs(want[p])));
      CHECK(got[n] == -7.0f);  // no write past n
    }
  }
}

TEST_CASE("avx2 axpy is bit-identical to scalar axpy") {
  const simd::KernelTable* v = simd::avx2_kernels();
  if (v == nullptr) return;
  const simd::KernelTable& s = simd::scalar_kernels();
  Rng rng(3);
  for (std::size_t n : kSizes) {
    const auto x = random_vec(n, rng);
    auto y1 = random_vec(n, rng);
    auto y2 = y1;
    s.axpy(y1.data(), 0.37f, x.data(), n);
    v->axpy(y2.data(), 0.37f, x.data(), n);
    CHECK(y1 == y2);
  }
}

TEST_CASE("network outputs agree under both tables") {
  if (simd::avx2_kernels() == nullptr) return;
  Restore r;
  const Network net{ModelSpec::lenet5(), Parameters::initialize(ModelSpec::lenet5(), 5)};
  Rng rng(4);
  Tensor x({1, 28, 28});
  for (float& p : x.values()) p = static_cast<float>(rng.uniform());

  simd::select("scalar");
  ForwardPass a = forward_with_cache(net, x);
  const Tensor ga = backward(net, a, Tensor({10}, 0.1f)).input;
  simd::select("avx2");
  ForwardPass b = forward_with_cache(net, x);
  const Tensor gb = backward(net, b, Tensor({10}, 0.1f)).input;

  for (std::size_t i = 0; i < a.logits.size(); ++i) CHECK(std::fabs(a.logits[i] - b.logits[i]) <= 1e-5f);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(std::fabs(ga[i] - gb[i]) <= 1e-6f);
}

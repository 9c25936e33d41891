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

// Test oracle: a naive double-precision network written directly from the
// layer definitions (nested loops, zero padding, sign-split interval
// arithmetic). Shares nothing with the library beyond ModelSpec and the
// float parameters it is seeded from.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ctt/model.hpp"
#include "ctt/rng.hpp"
#include "ctt/taboo.hpp"

namespace ctt::ref {

using Vec = std::vector<double>;

struct Params {
  std::vector<Vec> w;
  std::vector<Vec> b;
};

inline Params from(const Parameters& p) {
  Params r;
  for (const auto& t : p.weights) r.w.emplace_back(t.values().begin(), t.values().end());
  for (const auto& t : p.biases) r.b.emplace_back(t.values().begin(), t.values().end());
  return r;
}

inline Vec from(const Tensor& t) { return Vec(t.values().begin(), t.values().end()); }

struct Dims {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const { return c * h * w; }
};

inline Dims dims_of(const Shape& s) {
  if (s.size() == 3) return {s[0], s[1], s[2]};
  return {1, 1, s.empty() ? 1 : s[0]};
}

// Records every discrete decision taken, so finite differences can skip
// points where a perturbation would cross a kink.
struct Signature {
  std::vector<int> bits;
  bool operator==(const Signature&) const = default;
};

// Monotone affine map of a box: lower uses W+ * lo + W- * hi.
struct Box {
  Vec lo, hi;
};

class Net {
 public:
  Net(const ModelSpec& spec, Params params) : spec_(spec), p_(std::move(params)) {
    in_ = dims_of(spec.input_shape);
    const auto shapes = spec.output_shapes();
    for (const auto& s : shapes) out_.push_back(dims_of(s));
  }

  Params& params() { return p_; }
  const ModelSpec& spec() const { return spec_; }

  // Output of every layer.
  std::vector<Vec> forward(const Vec& x, Signature* sig = nullptr) const {
    std::vector<Vec> acts;
    Vec cur = x;
    Dims d = in_;
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      const LayerSpec& ls = spec_.layers[l];
      const Dims o = out_[l];
      Vec next(o.size(), 0.0);
      switch (ls.kind) {
        case LayerKind::conv:
          conv(cur, d, p_.w[l], p_.b[l], ls, o, next);
          break;
        case LayerKind::fc:
          fc(cur, p_.w[l], p_.b[l], ls, next);
          break;
        case LayerKind::relu:
          for (std::size_t i = 0; i < cur.size(); ++i) {
            next[i] = cur[i] > 0.0 ? cur[i] : 0.0;
            if (sig) sig->bits.push_back(cur[i] > 0.0);
          }
          break;
        case LayerKind::maxpool:
          for (std::size_t c = 0; c < o.c; ++c)
            for (std::size_t i = 0; i < o.h; ++i)
              for (std::size_t j = 0; j < o.w; ++j) {
                double best = -std::numeric_limits<double>::infinity();
                int arg = 0;
                for (int k = 0; k < 4; ++k) {
                  const double v = cur[(c * d.h + 2 * i + k / 2) * d.w + 2 * j + k % 2];
                  if (v > best) {
                    best = v;
                    arg = k;
                  }
                }
                next[(c * o.h + i) * o.w + j] = best;
                if (sig) sig->bits.push_back(arg);
              }
          break;
      }
      acts.push_back(next);
      cur = std::move(next);
      d = o;
    }
    return acts;
  }

  std::vector<Box> propagate(const Box& input, Signature* sig = nullptr) const {
    std::vector<Box> out;
    Box cur = input;
    Dims d = in_;
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      const LayerSpec& ls = spec_.layers[l];
      const Dims o = out_[l];
      Box next{Vec(o.size(), 0.0), Vec(o.size(), 0.0)};
      if (ls.kind == LayerKind::conv || ls.kind == LayerKind::fc) {
        Vec wp = p_.w[l], wn = p_.w[l];
        for (std::size_t i = 0; i < wp.size(); ++i) {
          wp[i] = std::max(0.0, p_.w[l][i]);
          wn[i] = std::min(0.0, p_.w[l][i]);
        }
        Vec a(o.size()), b(o.size()), zero_b(p_.b[l].size(), 0.0);
        if (ls.kind == LayerKind::conv) {
          conv(cur.lo, d, wp, p_.b[l], ls, o, a);
          conv(cur.hi, d, wn, zero_b, ls, o, b);
          for (std::size_t i = 0; i < a.size(); ++i) next.lo[i] = a[i] + b[i];
          conv(cur.hi, d, wp, p_.b[l], ls, o, a);
          conv(cur.lo, d, wn, zero_b, ls, o, b);
          for (std::size_t i = 0; i < a.size(); ++i) next.hi[i] = a[i] + b[i];
        } else {
          fc(cur.lo, wp, p_.b[l], ls, a);
          fc(cur.hi, wn, zero_b, ls, b);
          for (std::size_t i = 0; i < a.size(); ++i) next.lo[i] = a[i] + b[i];
          fc(cur.hi, wp, p_.b[l], ls, a);
          fc(cur.lo, wn, zero_b, ls, b);
          for (std::size_t i = 0; i < a.size(); ++i) next.hi[i] = a[i] + b[i];
        }
      } else if (ls.kind == LayerKind::relu) {
        for (std::size_t i = 0; i < cur.lo.size(); ++i) {
          next.lo[i] = std::max(0.0, cur.lo[i]);
          next.hi[i] = std::max(0.0, cur.hi[i]);
          if (sig) {
            sig->bits.push_back(cur.lo[i] > 0.0);
            sig->bits.push_back(cur.hi[i] > 0.0);
          }
        }
      } else {
        for (std::size_t c = 0; c < o.c; ++c)
          for (std::size_t i = 0; i < o.h; ++i)
            for (std::size_t j = 0; j < o.w; ++j) {
              double lo = -std::numeric_limits<double>::infinity(), hi = lo;
              int alo = 0, ahi = 0;
              for (int k = 0; k < 4; ++k) {
                const std::size_t src = (c * d.h + 2 * i + k / 2) * d.w + 2 * j + k % 2;
                if (cur.lo[src] > lo) {
                  lo = cur.lo[src];
                  alo = k;
                }
                if (cur.hi[src] > hi) {
                  hi = cur.hi[src];
                  ahi = k;
                }
              }
              next.lo[(c * o.h + i) * o.w + j] = lo;
              next.hi[(c * o.h + i) * o.w + j] = hi;
              if (sig) {
                sig->bits.push_back(alo);
                sig->bits.push_back(ahi);
              }
            }
      }
      out.push_back(next);
      cur = std::move(next);
      d = o;
    }
    return out;
  }

 private:
  static void conv(const Vec& in, Dims d, const Vec& w, const Vec& b, const LayerSpec& ls, Dims o, Vec& out) {
    const long k = static_cast<long>(ls.kernel), pad = static_cast<long>(ls.padding);
    for (std::size_t oc = 0; oc < o.c; ++oc)
      for (std::size_t i = 0; i < o.h; ++i)
        for (std::size_t j = 0; j < o.w; ++j) {
          double s = b[oc];
          for (std::size_t ic = 0; ic < d.c; ++ic)
            for (long ki = 0; ki < k; ++ki)
              for (long kj = 0; kj < k; ++kj) {
                const long r = static_cast<long>(i * ls.stride) + ki - pad;
                const long c = static_cast<long>(j * ls.stride) + kj - pad;
                if (r < 0 || c < 0 || r >= static_cast<long>(d.h) || c >= static_cast<long>(d.w)) continue;
                s += w[((oc * d.c + ic) * k + ki) * k + kj] * in[(ic * d.h + r) * d.w + c];
              }
          out[(oc * o.h + i) * o.w + j] = s;
        }
  }

  static void fc(const Vec& in, const Vec& w, const Vec& b, const LayerSpec& ls, Vec& out) {
    for (std::size_t o = 0; o < ls.out_size; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < ls.in_size; ++i) s += w[o * ls.in_size + i] * in[i];
      out[o] = s;
    }
  }

  ModelSpec spec_;
  Params p_;
  Dims in_;
  std::vector<Dims> out_;
};

inline double cross_entropy(const Vec& z, std::size_t y) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return std::log(s) + m - z[y];
}

inline Box epsilon_box(const Vec& x, double eps) {
  Box b{x, x};
  for (std::size_t i = 0; i < x.size(); ++i) {
    b.lo[i] = std::max(0.0, x[i] - eps);
    b.hi[i] = std::min(1.0, x[i] + eps);
  }
  return b;
}

struct Losses {
  double ce = 0.0, detection = 0.0, loose = 0.0, strict = 0.0;
};

// Same definitions as the library, written independently.
inline Losses ctt_losses(const Net& net, const TabooKey& key, const Vec& x, std::size_t y, double eps,
                         bool with_bounds, Signature* sig = nullptr) {
  Losses L;
  const auto acts = net.forward(x, sig);
  L.ce = cross_entropy(acts.back(), y);
  std::vector<Box> boxes;
  if (with_bounds) boxes = net.propagate(epsilon_box(x, eps), sig);
  for (std::size_t l = 0; l < key.masks.size(); ++l) {
    const double t = key.thresholds[l];
    for (std::uint32_t i : key.masks[l]) {
      const double a = acts[l][i];
      if (sig) sig->bits.push_back(a > t);
      if (a > t) L.detection += a;
      if (!with_bounds) continue;
      const double lo = boxes[l].lo[i], hi = boxes[l].hi[i];
      if (sig) {
        sig->bits.push_back(t > lo);
        sig->bits.push_back(t > hi);
      }
      if (t > lo) L.strict += t - lo;
      if (t > hi) L.loose += t - hi;
    }
  }
  return L;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

inline Network random_network(const ModelSpec& spec, std::uint64_t seed, double scale = 1.0) {
  Network net{spec, Parameters::initialize(spec, seed)};
  if (scale != 1.0) {
    for (auto& w : net.params.weights)
      for (float& v : w.values()) v = static_cast<float>(v * scale);
  }
  return net;
}

inline Tensor random_input(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(shape);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// conv 1->3 3x3 pad 1, relu, maxpool, conv 3->4 3x3, relu, fc 16->6, relu, fc 6->3 on 1x8x8.
inline ModelSpec small_spec() {
  ModelSpec s;
  s.name = "small";
  s.input_shape = {1, 8, 8};
  s.layers = {LayerSpec::conv(1, 3, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(), LayerSpec::conv(3, 4, 3),
              LayerSpec::relu(),           LayerSpec::fc(16, 6),  LayerSpec::relu(),    LayerSpec::fc(6, 3)};
  return s;
}

}  // namespace ctt::ref

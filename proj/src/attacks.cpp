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

#include "ctt/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ctt/checkpoint.hpp"
#include "ctt/rng.hpp"

namespace ctt {

namespace {

constexpr AttackMethod kMethods[] = {AttackMethod::fgsm,   AttackMethod::fgm_l2, AttackMethod::bim,
                                     AttackMethod::l2_bim, AttackMethod::pgd,    AttackMethod::cw_l2,
                                     AttackMethod::deepfool, AttackMethod::boundary};

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

bool all_zero(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](float v) { return v == 0.0f; });
}

AdvExample finish(const Network& net, const Tensor& x, Tensor adv, std::uint32_t y, AdvExample ex) {
  ex.original = x;
  ex.perturbed = std::move(adv);
  ex.label = y;
  ex.predicted = predict(net, ex.perturbed);
  ++ex.queries;
  ex.success = ex.predicted != y;
  ex.l2 = l2_distance(ex.perturbed, x);
  ex.linf = linf_distance(ex.perturbed, x);
  return ex;
}

// l-infinity or l2 ball around x, then [0,1].
void project(Tensor& adv, const Tensor& x, Norm norm, double eps) {
  if (norm == Norm::linf) {
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double lo = std::max(0.0, static_cast<double>(x[i]) - eps);
      const double hi = std::min(1.0, static_cast<double>(x[i]) + eps);
      float v = static_cast<float>(std::clamp(static_cast<double>(adv[i]), lo, hi));
      // float rounding of the bounds must not leak past the budget
      if (static_cast<double>(v) - x[i] > eps) v = std::nextafter(v, x[i]);
      if (static_cast<double>(x[i]) - v > eps) v = std::nextafter(v, x[i]);
      adv[i] = v;
    }
    return;
  }
  const double d = l2_distance(adv, x);
  if (d <= eps) {
    for (float& v : adv.values()) v = clamp01(v);
    return;
  }
  const Tensor full = adv;
  // float rounding of x + delta can push a small ball's norm back over eps; shrink until it fits
  for (double scale = eps / d * (1.0 - 1e-7);; scale *= 1.0 - 1e-5) {
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] = clamp01(x[i] + scale * (static_cast<double>(full[i]) - x[i]));
    }
    if (l2_distance(adv, x) <= eps) return;
  }
}

double margin_loss(const Tensor& logits, std::uint32_t y, double confidence, std::size_t* runner_up) {
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j != y && logits[j] > logits[best]) best = j;
  }
  if (runner_up != nullptr) *runner_up = best;
  return std::max(0.0, static_cast<double>(logits[y]) - logits[best] + confidence);
}

}  // namespace

const char* method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::fgm_l2: return "fgm_l2";
    case AttackMethod::bim: return "bim";
    case AttackMethod::l2_bim: return "l2_bim";
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::cw_l2: return "cw_l2";
    case AttackMethod::deepfool: return "deepfool";
    case AttackMethod::boundary: return "boundary";
  }
  return "?";
}

AttackMethod parse_method(const std::string& name) {
  for (AttackMethod m : kMethods) {
    if (name == method_name(m)) return m;
  }
  throw std::invalid_argument("unknown attack method '" + name + "'");
}

const char* norm_name(Norm n) { return n == Norm::linf ? "linf" : "l2"; }

Norm parse_norm(const std::string& name) {
  if (name == "linf") return Norm::linf;
  if (name == "l2") return Norm::l2;
  throw std::invalid_argument("unknown norm '" + name + "' (expected linf or l2)");
}

AttackSpec AttackSpec::defaults(AttackMethod method) {
  AttackSpec s;
  s.method = method;
  switch (method) {
    case AttackMethod::fgsm:
      s.steps = 1;
      break;
    case AttackMethod::fgm_l2:
      s.norm = Norm::l2;
      s.epsilon = 1.0;
      s.steps = 1;
      break;
    case AttackMethod::bim:
      break;
    case AttackMethod::l2_bim:
      s.norm = Norm::l2;
      s.epsilon = 1.0;
      break;
    case AttackMethod::pgd:
      s.random_start = true;
      break;
    case AttackMethod::cw_l2:
      s.norm = Norm::l2;
      s.epsilon = 0.0;
      s.steps = 1000;
      break;
    case AttackMethod::deepfool:
      s.norm = Norm::l2;
      s.epsilon = 0.0;
      s.steps = 50;
      break;
    case AttackMethod::boundary:
      s.norm = Norm::l2;
      s.epsilon = 0.0;
      s.steps = 1000;
      break;
  }
  return s;
}

bool AttackSpec::iterative() const {
  return method == AttackMethod::bim || method == AttackMethod::l2_bim || method == AttackMethod::pgd;
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("attack budget must be >= 0");
  if (iterative() && !(epsilon > 0.0)) throw std::invalid_argument("iterative attacks need a positive budget");
  if (steps == 0) throw std::invalid_argument("attack steps must be >= 1");
  if (step_size < 0.0) throw std::invalid_argument("step size must be >= 0 (0 = auto)");
  if (gradient.kind == GradientSource::Kind::estimated && !(gradient.delta > 0.0)) {
    throw std::invalid_argument("gradient estimation delta must be positive");
  }
  if (method == AttackMethod::cw_l2) {
    if (!(c > 0.0)) throw std::invalid_argument("cw_l2 constant must be positive");
    if (binary_search_steps == 0) throw std::invalid_argument("cw_l2 needs at least one search step");
  }
  if (method == AttackMethod::boundary && trials == 0) throw std::invalid_argument("boundary attack needs trials");
}

std::string AttackSpec::label() const {
  char buf[160];
  switch (method) {
    case AttackMethod::cw_l2:
      std::snprintf(buf, sizeof buf, "cw_l2 c=%.4f steps=%zu", c, steps);
      break;
    case AttackMethod::deepfool:
      std::snprintf(buf, sizeof buf, "deepfool overshoot=%.4f steps=%zu", overshoot, steps);
      break;
    case AttackMethod::boundary:
      std::snprintf(buf, sizeof buf, "boundary iterations=%zu", steps);
      break;
    default:
      std::snprintf(buf, sizeof buf, "%s %s eps=%.4f steps=%zu", method_name(method), norm_name(norm), epsilon,
                    steps);
  }
  std::string s = buf;
  if (gradient.kind == GradientSource::Kind::estimated) s += " ge";
  return s;
}

nlohmann::json to_json(const AttackSpec& s) {
  return {{"method", method_name(s.method)},
          {"norm", norm_name(s.norm)},
          {"epsilon", s.epsilon},
          {"c", s.c},
          {"steps", s.steps},
          {"step_size", s.step_size},
          {"random_start", s.random_start},
          {"early_stop", s.early_stop},
          {"gradient", s.gradient.kind == GradientSource::Kind::analytic ? "analytic" : "estimated"},
          {"delta", s.gradient.delta},
          {"seed", s.seed},
          {"learning_rate", s.learning_rate},
          {"confidence", s.confidence},
          {"binary_search_steps", s.binary_search_steps},
          {"abort_early", s.abort_early},
          {"overshoot", s.overshoot},
          {"trials", s.trials}};
}

AttackSpec attack_spec_from_json(const nlohmann::json& j) {
  AttackSpec s = AttackSpec::defaults(parse_method(j.at("method").get<std::string>()));
  s.norm = parse_norm(j.value("norm", std::string(norm_name(s.norm))));
  s.epsilon = j.value("epsilon", s.epsilon);
  s.c = j.value("c", s.c);
  s.steps = j.value("steps", s.steps);
  s.step_size = j.value("step_size", s.step_size);
  s.random_start = j.value("random_start", s.random_start);
  s.early_stop = j.value("early_stop", s.early_stop);
  s.gradient.kind = j.value("gradient", std::string("analytic")) == "estimated" ? GradientSource::Kind::estimated
                                                                                : GradientSource::Kind::analytic;
  s.gradient.delta = j.value("delta", s.gradient.delta);
  s.seed = j.value("seed", s.seed);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.confidence = j.value("confidence", s.confidence);
  s.binary_search_steps = j.value("binary_search_steps", s.binary_search_steps);
  s.abort_early = j.value("abort_early", s.abort_early);
  s.overshoot = j.value("overshoot", s.overshoot);
  s.trials = j.value("trials", s.trials);
  return s;
}

LogitObjective cross_entropy_objective(std::uint32_t label) {
  return {[label](const Tensor& z) { return softmax_cross_entropy(z, label).loss; },
          [label](const Tensor& z) { return softmax_cross_entropy(z, label).grad_logits; }};
}

InputGradient objective_gradient(const Network& net, const Tensor& x, const LogitObjective& obj,
                                 const GradientSource& source) {
  InputGradient out;
  if (source.kind == GradientSource::Kind::analytic) {
    ForwardPass pass = forward_with_cache(net, x);
    out.logits = pass.logits;
    out.value = obj.value(pass.logits);
    out.grad = backward(net, pass, obj.gradient(pass.logits), nullptr, true).input;
    out.queries = 1;
    return out;
  }
  out.logits = predict_logits(net, x);
  out.value = obj.value(out.logits);
  out.grad = Tensor(x.shape());
  out.queries = 1 + 2 * x.size();
  Tensor probe = x;
  const float step = static_cast<float>(source.delta);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float xp = x[i] + step, xm = x[i] - step;
    probe[i] = xp;
    const double fp = obj.value(predict_logits(net, probe));
    probe[i] = xm;
    const double fm = obj.value(predict_logits(net, probe));
    probe[i] = x[i];
    out.grad[i] = static_cast<float>((fp - fm) / (static_cast<double>(xp) - xm));
  }
  return out;
}

Tensor estimate_gradient(const Network& net, const Tensor& x, std::uint32_t y, double delta, std::size_t* queries) {
  if (!(delta > 0.0)) throw std::invalid_argument("estimate_gradient: delta must be positive");
  InputGradient g = objective_gradient(net, x, cross_entropy_objective(y), GradientSource::estimated(delta));
  if (queries != nullptr) *queries += g.queries - 1;
  return std::move(g.grad);
}

std::vector<Tensor> logit_jacobian(const Network& net, const Tensor& x, const GradientSource& source,
                                   std::size_t* queries) {
  const std::size_t k = net.spec.num_classes();
  std::vector<Tensor> rows;
  if (source.kind == GradientSource::Kind::analytic) {
    for (std::size_t c = 0; c < k; ++c) {
      ForwardPass pass = forward_with_cache(net, x);
      Tensor onehot(pass.logits.shape());
      onehot[c] = 1.0f;
      rows.push_back(backward(net, pass, onehot, nullptr, true).input);
    }
    if (queries != nullptr) *queries += k;
    return rows;
  }
  rows.assign(k, Tensor(x.shape()));
  Tensor probe = x;
  const float step = static_cast<float>(source.delta);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float xp = x[i] + step, xm = x[i] - step;
    probe[i] = xp;
    const Tensor zp = predict_logits(net, probe);
    probe[i] = xm;
    const Tensor zm = predict_logits(net, probe);
    probe[i] = x[i];
    const double h = static_cast<double>(xp) - xm;
    for (std::size_t c = 0; c < k; ++c) rows[c][i] = static_cast<float>((static_cast<double>(zp[c]) - zm[c]) / h);
  }
  if (queries != nullptr) *queries += 2 * x.size();
  return rows;
}

AdvExample fgsm(const Network& net, const Tensor& x, std::uint32_t y, double eps, const GradientSource& source) {
  AdvExample ex;
  const InputGradient g = objective_gradient(net, x, cross_entropy_objective(y), source);
  ex.queries = g.queries;
  Tensor adv = x;
  if (all_zero(g.grad)) {
    ex.noop = true;
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = g.grad[i] > 0.0f ? 1.0 : (g.grad[i] < 0.0f ? -1.0 : 0.0);
      adv[i] = static_cast<float>(x[i] + eps * s);
    }
    project(adv, x, Norm::linf, eps);
  }
  return finish(net, x, std::move(adv), y, std::move(ex));
}

AdvExample fgm_l2(const Network& net, const Tensor& x, std::uint32_t y, double eps, const GradientSource& source) {
  AdvExample ex;
  const InputGradient g = objective_gradient(net, x, cross_entropy_objective(y), source);
  ex.queries = g.queries;
  Tensor adv = x;
  const double n = l2_norm(g.grad.values());
  if (n == 0.0) {
    ex.noop = true;
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) adv[i] = static_cast<float>(x[i] + eps * g.grad[i] / n);
    project(adv, x, Norm::l2, eps);
  }
  return finish(net, x, std::move(adv), y, std::move(ex));
}

AdvExample iterative_attack(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec) {
  spec.validate();
  if (!spec.iterative()) throw std::invalid_argument("iterative_attack: method must be bim, l2_bim or pgd");
  const Norm norm = spec.method == AttackMethod::l2_bim ? Norm::l2
                    : spec.method == AttackMethod::bim  ? Norm::linf
                                                        : spec.norm;
  const double eps = spec.epsilon;
  const double alpha = spec.effective_step_size();
  Rng rng(spec.seed);
  AdvExample ex;
  Tensor adv = x;
  if (spec.random_start) {
    if (norm == Norm::linf) {
      for (std::size_t i = 0; i < x.size(); ++i) adv[i] = static_cast<float>(x[i] + rng.uniform(-eps, eps));
    } else {
      Tensor dir(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) dir[i] = static_cast<float>(rng.normal());
      const double n = l2_norm(dir.values());
      const double radius = eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.size()));
      for (std::size_t i = 0; i < x.size(); ++i) adv[i] = static_cast<float>(x[i] + radius * dir[i] / n);
    }
    project(adv, x, norm, eps);
  }
  const LogitObjective ce = cross_entropy_objective(y);
  bool moved = false;
  for (std::size_t step = 0; step < spec.steps; ++step) {
    const InputGradient g = objective_gradient(net, adv, ce, spec.gradient);
    ex.queries += g.queries;
    if (spec.early_stop && argmax(g.logits) != y) break;
    if (norm == Norm::linf) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = g.grad[i] > 0.0f ? 1.0 : (g.grad[i] < 0.0f ? -1.0 : 0.0);
        adv[i] = static_cast<float>(adv[i] + alpha * s);
      }
    } else {
      const double n = l2_norm(g.grad.values());
      if (n == 0.0) continue;
      for (std::size_t i = 0; i < x.size(); ++i) adv[i] = static_cast<float>(adv[i] + alpha * g.grad[i] / n);
    }
    moved = moved || !all_zero(g.grad);
    project(adv, x, norm, eps);
  }
  ex.noop = !moved && !spec.random_start;
  return finish(net, x, std::move(adv), y, std::move(ex));
}

AdvExample cw_l2(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec) {
  spec.validate();
  AdvExample ex;
  if (predict(net, x) != y) {
    ex.queries = 1;
    return finish(net, x, x, y, std::move(ex));
  }
  const std::size_t n = x.size();
  std::vector<double> w0(n);
  for (std::size_t i = 0; i < n; ++i) w0[i] = std::atanh((2.0 * x[i] - 1.0) * (1.0 - 1e-6));

  double c = spec.c, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  double best_l2 = std::numeric_limits<double>::infinity();
  Tensor best, last = x;
  const double kappa = spec.confidence;
  for (std::size_t search = 0; search < spec.binary_search_steps; ++search) {
    std::vector<double> w = w0, m(n, 0.0), v(n, 0.0);
    const LogitObjective hinge{
        [&](const Tensor& z) { return c * margin_loss(z, y, kappa, nullptr); },
        [&](const Tensor& z) {
          std::size_t j = 0;
          Tensor g(z.shape());
          if (margin_loss(z, y, kappa, &j) > 0.0) {
            g[y] = static_cast<float>(c);
            g[j] = static_cast<float>(-c);
          }
          return g;
        }};
    bool found = false;
    double prev = std::numeric_limits<double>::infinity();
    const std::size_t check_every = std::max<std::size_t>(spec.steps / 10, 1);
    Tensor adv(x.shape());
    for (std::size_t step = 0; step < spec.steps; ++step) {
      for (std::size_t i = 0; i < n; ++i) adv[i] = static_cast<float>((std::tanh(w[i]) + 1.0) / 2.0);
      const InputGradient g = objective_gradient(net, adv, hinge, spec.gradient);
      ex.queries += g.queries;
      const double dist = l2_distance(adv, x);
      const double loss = dist * dist + g.value;
      if (argmax(g.logits) != y && dist < best_l2) {
        best_l2 = dist;
        best = adv;
        found = true;
      }
      if (spec.abort_early && step % check_every == 0) {
        if (loss > prev * 0.9999) break;
        prev = loss;
      }
      const double t = static_cast<double>(step + 1);
      const double lr_t = spec.learning_rate * std::sqrt(1.0 - std::pow(0.999, t)) / (1.0 - std::pow(0.9, t));
      for (std::size_t i = 0; i < n; ++i) {
        const double th = std::tanh(w[i]);
        const double dx = 2.0 * (static_cast<double>(adv[i]) - x[i]) + g.grad[i];
        const double dw = dx * (1.0 - th * th) / 2.0;
        m[i] = 0.9 * m[i] + 0.1 * dw;
        v[i] = 0.999 * v[i] + 0.001 * dw * dw;
        w[i] -= lr_t * m[i] / (std::sqrt(v[i]) + 1e-8);
      }
    }
    last = adv;
    if (found) {
      hi = std::min(hi, c);
      c = (lo + hi) / 2.0;
    } else {
      lo = std::max(lo, c);
      c = std::isinf(hi) ? c * 10.0 : (lo + hi) / 2.0;
    }
  }
  ex.converged = !best.empty();
  return finish(net, x, ex.converged ? best : last, y, std::move(ex));
}

AdvExample deepfool(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec) {
  spec.validate();
  AdvExample ex;
  const Tensor z0 = predict_logits(net, x);
  ex.queries = 1;
  const std::size_t k0 = argmax(z0);
  const std::size_t classes = z0.size();
  if (classes < 2) throw std::invalid_argument("deepfool needs at least two classes");
  if (k0 != y) return finish(net, x, x, y, std::move(ex));

  std::vector<double> total(x.size(), 0.0);
  Tensor adv = x;
  bool crossed = false;
  for (std::size_t it = 0; it < spec.steps; ++it) {
    const Tensor z = predict_logits(net, adv);
    ++ex.queries;
    if (argmax(z) != k0) {
      crossed = true;
      break;
    }
    const std::vector<Tensor> jac = logit_jacobian(net, adv, spec.gradient, &ex.queries);
    double best = std::numeric_limits<double>::infinity(), best_f = 0.0, best_norm = 0.0;
    std::size_t best_k = classes;
    for (std::size_t k = 0; k < classes; ++k) {
      if (k == k0) continue;
      double nn = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(jac[k][i]) - jac[k0][i];
        nn += d * d;
      }
      if (nn == 0.0) continue;
      const double f = static_cast<double>(z[k]) - z[k0];
      const double dist = std::fabs(f) / std::sqrt(nn);
      if (dist < best) {
        best = dist;
        best_k = k;
        best_f = f;
        best_norm = nn;
      }
    }
    if (best_k == classes) {
      ex.noop = it == 0;
      break;
    }
    const double scale = std::fabs(best_f) / best_norm;
    for (std::size_t i = 0; i < x.size(); ++i) {
      total[i] += scale * (static_cast<double>(jac[best_k][i]) - jac[k0][i]);
    }
    for (std::size_t i = 0; i < x.size(); ++i) adv[i] = clamp01(x[i] + (1.0 + spec.overshoot) * total[i]);
    if (spec.epsilon > 0.0) project(adv, x, spec.norm, spec.epsilon);
  }
  if (!crossed) crossed = predict(net, adv) != k0;
  ex.converged = crossed;
  return finish(net, x, std::move(adv), y, std::move(ex));
}

AdvExample boundary_attack(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec) {
  spec.validate();
  AdvExample ex;
  auto adversarial = [&](const Tensor& t) {
    ++ex.queries;
    return predict(net, t) != y;
  };
  if (adversarial(x)) return finish(net, x, x, y, std::move(ex));

  Rng rng(spec.seed);
  const std::size_t n = x.size();
  Tensor start;
  for (int draw = 0; draw < 10000 && start.empty(); ++draw) {
    Tensor noise(x.shape());
    for (std::size_t i = 0; i < n; ++i) noise[i] = static_cast<float>(rng.uniform());
    if (adversarial(noise)) start = std::move(noise);
  }
  if (start.empty()) {
    ex.converged = false;
    return finish(net, x, x, y, std::move(ex));
  }
  // shrink the blend toward x while it stays adversarial
  {
    double lo = 0.0, hi = 1.0;
    Tensor blend(x.shape());
    for (int it = 0; it < 25; ++it) {
      const double mid = (lo + hi) / 2.0;
      for (std::size_t i = 0; i < n; ++i) blend[i] = static_cast<float>((1.0 - mid) * x[i] + mid * start[i]);
      if (adversarial(blend)) hi = mid; else lo = mid;
    }
    for (std::size_t i = 0; i < n; ++i) start[i] = static_cast<float>((1.0 - hi) * x[i] + hi * start[i]);
  }

  Tensor adv = std::move(start);
  double dist = l2_distance(adv, x);
  double spherical = 0.01, source = 0.01;
  Tensor cand(x.shape()), step(x.shape());
  std::vector<double> diff(n);
  for (std::size_t it = 0; it < spec.steps; ++it) {
    std::size_t orth_ok = 0, full_ok = 0;
    Tensor best;
    double best_d = dist;
    for (std::size_t t = 0; t < spec.trials; ++t) {
      double dn = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        diff[i] = static_cast<double>(x[i]) - adv[i];
        dn += diff[i] * diff[i];
      }
      dn = std::sqrt(dn);
      if (dn == 0.0) break;
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        step[i] = static_cast<float>(rng.normal());
        proj += step[i] * diff[i] / dn;
      }
      for (std::size_t i = 0; i < n; ++i) step[i] = static_cast<float>(step[i] - proj * diff[i] / dn);
      const double sn = l2_norm(step.values());
      if (sn == 0.0) continue;
      // orthogonal move of relative size `spherical`, back onto the sphere of radius dn
      std::vector<double> p(n);
      double pn = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = static_cast<double>(adv[i]) - x[i] + spherical * dn * step[i] / sn;
        pn += p[i] * p[i];
      }
      pn = std::sqrt(pn);
      for (std::size_t i = 0; i < n; ++i) cand[i] = clamp01(x[i] + p[i] * dn / pn);
      if (adversarial(cand)) ++orth_ok;
      for (std::size_t i = 0; i < n; ++i) cand[i] = clamp01(x[i] + (1.0 - source) * p[i] * dn / pn);
      if (adversarial(cand)) {
        ++full_ok;
        const double d = l2_distance(cand, x);
        if (d <= best_d) {
          best_d = d;
          best = cand;
        }
      }
    }
    const double orth_rate = static_cast<double>(orth_ok) / spec.trials;
    const double full_rate = static_cast<double>(full_ok) / spec.trials;
    if (orth_rate > 0.5) spherical *= 1.5; else if (orth_rate < 0.2) spherical /= 1.5;
    if (full_rate > 0.5) source *= 1.5; else if (full_rate < 0.2) source /= 1.5;
    source = std::min(source, 0.5);
    if (!best.empty()) {
      adv = std::move(best);
      dist = best_d;
    }
    ex.trace.push_back(dist);
  }
  return finish(net, x, std::move(adv), y, std::move(ex));
}

AdvExample run_attack(const Network& net, const Tensor& x, std::uint32_t y, const AttackSpec& spec,
                      std::size_t index) {
  AttackSpec s = spec;
  s.seed = Rng::derive(spec.seed, index).next();
  s.validate();
  switch (s.method) {
    case AttackMethod::fgsm: return fgsm(net, x, y, s.epsilon, s.gradient);
    case AttackMethod::fgm_l2: return fgm_l2(net, x, y, s.epsilon, s.gradient);
    case AttackMethod::bim:
    case AttackMethod::l2_bim:
    case AttackMethod::pgd: return iterative_attack(net, x, y, s);
    case AttackMethod::cw_l2: return cw_l2(net, x, y, s);
    case AttackMethod::deepfool: return deepfool(net, x, y, s);
    case AttackMethod::boundary: return boundary_attack(net, x, y, s);
  }
  throw std::invalid_argument("unhandled attack method");
}

AdversarialBatch attack_dataset(const Network& net, const Dataset& data, const std::vector<std::size_t>& indices,
                                const AttackSpec& spec, const AttackProgress& progress) {
  spec.validate();
  AdversarialBatch batch;
  batch.spec = spec;
  batch.indices = indices;
  batch.examples.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t idx = indices[k];
    if (idx >= data.size()) throw std::out_of_range("attack index " + std::to_string(idx) + " outside dataset");
    batch.examples.push_back(run_attack(net, data.image(idx), data.labels[idx], spec, idx));
    if (progress) progress(k + 1, indices.size());
  }
  return batch;
}

void save_adversarial_batch(const std::filesystem::path& path, const AdversarialBatch& batch) {
  BlobFile file;
  file.meta["kind"] = "adversarial";
  file.meta["attack"] = to_json(batch.spec);
  file.meta["indices"] = batch.indices;
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> predicted, queries;
  std::vector<bool> success, noop, converged;
  for (const auto& e : batch.examples) {
    labels.push_back(e.label);
    predicted.push_back(e.predicted);
    queries.push_back(e.queries);
    success.push_back(e.success);
    noop.push_back(e.noop);
    converged.push_back(e.converged);
  }
  file.meta["labels"] = labels;
  file.meta["predicted"] = predicted;
  file.meta["queries"] = queries;
  file.meta["success"] = success;
  file.meta["noop"] = noop;
  file.meta["converged"] = converged;
  const std::size_t count = batch.examples.size();
  if (count > 0) {
    Shape shape = batch.examples.front().original.shape();
    shape.insert(shape.begin(), count);
    Tensor orig(shape), pert(shape), norms({count, 2});
    const std::size_t per = batch.examples.front().original.size();
    for (std::size_t k = 0; k < count; ++k) {
      const auto& e = batch.examples[k];
      require_shape(e.perturbed, e.original.shape(), "perturbed input");
      if (e.original.size() != per) throw DimensionError("adversarial batch mixes input shapes");
      std::copy(e.original.values().begin(), e.original.values().end(), orig.data() + k * per);
      std::copy(e.perturbed.values().begin(), e.perturbed.values().end(), pert.data() + k * per);
      norms[2 * k] = static_cast<float>(e.l2);
      norms[2 * k + 1] = static_cast<float>(e.linf);
    }
    file.tensors.emplace_back("original", std::move(orig));
    file.tensors.emplace_back("perturbed", std::move(pert));
    file.tensors.emplace_back("norms", std::move(norms));
  }
  write_blob_file(path, file);
}

AdversarialBatch load_adversarial_batch(const std::filesystem::path& path) {
  const BlobFile file = read_blob_file(path);
  if (file.meta.value("kind", "") != "adversarial") {
    throw FormatError(path.string() + ": not an adversarial batch");
  }
  AdversarialBatch batch;
  try {
    batch.spec = attack_spec_from_json(file.meta.at("attack"));
    batch.indices = file.meta.at("indices").get<std::vector<std::size_t>>();
    const auto labels = file.meta.at("labels").get<std::vector<std::uint32_t>>();
    const auto predicted = file.meta.at("predicted").get<std::vector<std::size_t>>();
    const auto queries = file.meta.at("queries").get<std::vector<std::size_t>>();
    const auto noop = file.meta.at("noop").get<std::vector<bool>>();
    const auto converged = file.meta.at("converged").get<std::vector<bool>>();
    const std::size_t count = labels.size();
    if (batch.indices.size() != count || predicted.size() != count || queries.size() != count) {
      throw FormatError(path.string() + ": per-example arrays disagree in length");
    }
    if (count == 0) return batch;
    const Tensor& orig = file.get("original");
    const Tensor& pert = file.get("perturbed");
    if (orig.shape() != pert.shape() || orig.dim(0) != count) {
      throw FormatError(path.string() + ": tensor shapes disagree with example count " + std::to_string(count));
    }
    for (std::size_t k = 0; k < count; ++k) {
      AdvExample e;
      e.original = orig.slice(k);
      e.perturbed = pert.slice(k);
      e.label = labels[k];
      e.predicted = predicted[k];
      e.success = e.predicted != e.label;
      e.queries = queries[k];
      e.noop = noop.at(k);
      e.converged = converged.at(k);
      e.l2 = l2_distance(e.perturbed, e.original);
      e.linf = linf_distance(e.perturbed, e.original);
      batch.examples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed adversarial batch header: " + e.what());
  }
  return batch;
}

}  // namespace ctt

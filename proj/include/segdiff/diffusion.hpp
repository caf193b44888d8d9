/*
 * Copyright 2026 The segdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Gaussian diffusion math: variance schedules, forward noising, the
// noise-prediction reverse step, ancestral sampling and the training losses.
// Step indices are 1-based; alpha_bar(0) is defined as 1.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segdiff/common.hpp"

namespace segdiff {

struct NoiseSchedule {
  std::vector<double> betas;       // betas[t-1] is beta_t
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s
  double beta_start = 0.0;
  double beta_end = 0.0;

  int steps() const noexcept { return static_cast<int>(betas.size()); }
  double beta(int t) const { return betas.at(check(t) - 1); }
  double alpha(int t) const { return alphas.at(check(t) - 1); }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars.at(check(t) - 1);
  }
  /// Posterior variance of q(x_{t-1} | x_t, x_0); zero at t = 1.
  double posterior_variance(int t) const {
    if (check(t) == 1) return 0.0;
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
  }

  int check(int t) const {
    if (t < 1 || t > steps()) {
      throw ArgumentError("step index " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
    return t;
  }

  bool operator==(const NoiseSchedule&) const = default;
};

/// Linearly interpolated betas from beta_start to beta_end inclusive.
inline NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule bounds must satisfy 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double running = 1.0;
  for (std::size_t i = 0; i < s.betas.size(); ++i) {
    s.alphas[i] = 1.0 - s.betas[i];
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  return s;
}

/// Maps external [0,1] pixels to the internal [-1,1] range and back.
template <class T>
Grid<T> to_internal_range(const Grid<T>& image) {
  Grid<T> out = image;
  for (auto& v : out.data) v = v * T(2) - T(1);
  return out;
}

template <class T>
Grid<T> to_external_range(const Grid<T>& internal) {
  Grid<T> out = internal;
  for (auto& v : out.data) v = (std::clamp(v, T(-1), T(1)) + T(1)) / T(2);
  return out;
}

template <class T>
struct NoisySample {
  Grid<T> x0;
  int t = 0;
  Grid<T> epsilon;
  Grid<T> xt;
};

namespace detail {
template <class T>
void q_sample_into(std::span<const T> x0, std::span<const T> eps, double alpha_bar, std::span<T> out) {
  const T a = static_cast<T>(std::sqrt(alpha_bar));
  const T b = static_cast<T>(std::sqrt(1.0 - alpha_bar));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
}

template <class T>
void posterior_mean_into(std::span<const T> xt, std::span<const T> eps_hat, double alpha, double beta,
                         double alpha_bar, std::span<T> out) {
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double eps_coef = beta / std::sqrt(1.0 - alpha_bar);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(inv_sqrt_alpha * (static_cast<double>(xt[i]) - eps_coef * static_cast<double>(eps_hat[i])));
  }
}
}  // namespace detail

template <class T>
NoisySample<T> q_sample(const Grid<T>& x0, int t, const Grid<T>& epsilon, const NoiseSchedule& schedule) {
  require_same_shape(x0, epsilon, "q_sample");
  schedule.check(t);
  NoisySample<T> s{x0, t, epsilon, Grid<T>(x0.rows, x0.cols)};
  detail::q_sample_into<T>(x0.data, epsilon.data, schedule.alpha_bar(t), s.xt.data);
  return s;
}

template <class T>
struct ReverseStepParams {
  Grid<T> mu;
  double sigma2 = 0.0;
};

/// Reverse-process mean from a noise prediction; variance fixed to the posterior variance.
template <class T>
ReverseStepParams<T> posterior_mean_variance(const Grid<T>& xt, int t, const Grid<T>& eps_hat,
                                             const NoiseSchedule& schedule) {
  require_same_shape(xt, eps_hat, "posterior_mean_variance");
  schedule.check(t);
  ReverseStepParams<T> p{Grid<T>(xt.rows, xt.cols), schedule.posterior_variance(t)};
  detail::posterior_mean_into<T>(xt.data, eps_hat.data, schedule.alpha(t), schedule.beta(t), schedule.alpha_bar(t),
                                 p.mu.data);
  return p;
}

template <class T>
Grid<T> reverse_step(const Grid<T>& xt, int t, const Grid<T>& eps_hat, const NoiseSchedule& schedule, Rng& rng) {
  auto p = posterior_mean_variance(xt, t, eps_hat, schedule);
  if (p.sigma2 > 0.0) {
    const double sigma = std::sqrt(p.sigma2);
    for (auto& v : p.mu.data) v = static_cast<T>(static_cast<double>(v) + sigma * rng.normal());
  }
  return std::move(p.mu);
}

/// Ancestral sampling for a batch; sample b draws all of its noise from rngs[b], so
/// results do not depend on how samples are grouped into batches.
/// `denoise(xt_batch, t)` returns one noise prediction per input grid.
template <class T, class BatchDenoiser>
std::vector<Grid<T>> ancestral_sample_batch(BatchDenoiser&& denoise, const NoiseSchedule& schedule, std::size_t rows,
                                            std::size_t cols, std::span<Rng> rngs) {
  std::vector<Grid<T>> x(rngs.size(), Grid<T>(rows, cols));
  for (std::size_t b = 0; b < rngs.size(); ++b) {
    for (auto& v : x[b].data) v = static_cast<T>(rngs[b].normal());
  }
  for (int t = schedule.steps(); t >= 1; --t) {
    std::vector<Grid<T>> eps = denoise(static_cast<const std::vector<Grid<T>>&>(x), t);
    if (eps.size() != x.size()) throw ContractViolation("denoiser returned a batch of the wrong size");
    for (std::size_t b = 0; b < x.size(); ++b) {
      if (!eps[b].same_shape(x[b])) throw ContractViolation("denoiser output shape does not match its input");
      x[b] = reverse_step(x[b], t, eps[b], schedule, rngs[b]);
    }
  }
  for (auto& g : x) g = to_external_range(g);
  return x;
}

/// Single-sample convenience wrapper; `denoise(xt, t)` returns one grid.
template <class T, class Denoiser>
Grid<T> ancestral_sample(Denoiser&& denoise, const NoiseSchedule& schedule, std::size_t rows, std::size_t cols,
                         Rng& rng) {
  std::vector<Rng> rngs{rng};
  auto batched = [&](const std::vector<Grid<T>>& xs, int t) { return std::vector<Grid<T>>{denoise(xs[0], t)}; };
  auto out = ancestral_sample_batch<T>(batched, schedule, rows, cols, std::span<Rng>(rngs));
  rng = rngs[0];
  return std::move(out[0]);
}

struct LossReport {
  double simple_loss = 0.0;
  std::optional<std::vector<double>> vlb_terms;  // L_0 .. L_T when populated
};

template <class T>
LossReport simple_loss(const Grid<T>& epsilon, const Grid<T>& eps_hat) {
  require_same_shape(epsilon, eps_hat, "simple_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < epsilon.size(); ++i) {
    const double d = static_cast<double>(epsilon.data[i]) - static_cast<double>(eps_hat.data[i]);
    acc += d * d;
  }
  LossReport r;
  r.simple_loss = epsilon.empty() ? 0.0 : acc / static_cast<double>(epsilon.size());
  return r;
}

namespace detail {
inline double gaussian_kl(double mean_q, double var_q, double mean_p, double var_p) {
  const double d = mean_q - mean_p;
  return 0.5 * (std::log(var_p / var_q) + (var_q + d * d) / var_p - 1.0);
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// -log P(x0 bin) under N(mean, var) with 8-bit bins of width 2/255 on [-1,1]; the
/// outermost bins extend to infinity.
inline double discretized_gaussian_nll(double x0, double mean, double var) {
  const double inv_std = 1.0 / std::sqrt(var);
  const double half_bin = 1.0 / 255.0;
  const double upper = x0 > 1.0 - 1e-9 ? 1.0 : std_normal_cdf((x0 + half_bin - mean) * inv_std);
  const double lower = x0 < -1.0 + 1e-9 ? 0.0 : std_normal_cdf((x0 - half_bin - mean) * inv_std);
  return -std::log(std::max(upper - lower, 1e-12));
}
}  // namespace detail

/// Closed-form variational-bound terms for one x0 along a trajectory.
/// `noise[t-1]` is the epsilon used to form x_t for t = 1..T. `denoise(xt, t)` returns eps_hat.
/// L_{t-1} uses matched variances (the model variance is the posterior variance), so it is
/// zero when eps_hat is the true noise. L_0 uses variance beta_1 because the posterior
/// variance vanishes at t = 1.
template <class T, class Denoiser>
LossReport vlb_diagnostics(const Grid<T>& x0, std::span<const Grid<T>> noise, Denoiser&& denoise,
                           const NoiseSchedule& schedule) {
  const int steps = schedule.steps();
  if (static_cast<int>(noise.size()) != steps) throw ArgumentError("vlb_diagnostics needs one noise draw per step");
  std::vector<double> terms(static_cast<std::size_t>(steps) + 1, 0.0);

  const double ab_T = schedule.alpha_bar(steps);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    terms[steps] += detail::gaussian_kl(std::sqrt(ab_T) * x0.data[i], 1.0 - ab_T, 0.0, 1.0);
  }

  for (int t = 1; t <= steps; ++t) {
    require_same_shape(x0, noise[t - 1], "vlb_diagnostics");
    const auto xt = q_sample(x0, t, noise[t - 1], schedule).xt;
    const Grid<T> eps_hat = denoise(xt, t);
    require_same_shape(xt, eps_hat, "vlb_diagnostics");
    const auto model = posterior_mean_variance(xt, t, eps_hat, schedule);
    if (t == 1) {
      for (std::size_t i = 0; i < x0.size(); ++i) {
        terms[0] += detail::discretized_gaussian_nll(x0.data[i], model.mu.data[i], schedule.beta(1));
      }
      continue;
    }
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t - 1);
    const double c0 = std::sqrt(ab_prev) * schedule.beta(t) / (1.0 - ab);
    const double ct = std::sqrt(schedule.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
    const double var = schedule.posterior_variance(t);
    double kl = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const double mean_q = c0 * x0.data[i] + ct * xt.data[i];
      kl += detail::gaussian_kl(mean_q, var, model.mu.data[i], var);
    }
    terms[t - 1] = std::max(kl, 0.0);
  }

  LossReport r;
  r.vlb_terms = std::move(terms);
  return r;
}

}  // namespace segdiff

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

#include <cmath>

#include <gtest/gtest.h>

#include "segdiff/diffusion.hpp"
#include "test_util.hpp"

namespace segdiff {
namespace {

double direct_product(int T, double b0, double b1) {
  double p = 1.0;
  for (int i = 0; i < T; ++i) p *= 1.0 - (b0 + (b1 - b0) * (T == 1 ? 0.0 : double(i) / (T - 1)));
  return p;
}

TEST(Schedule, SingleStep) {
  const auto s = make_linear_schedule(1, 0.5, 0.5);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.5);
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, DefaultTerminalAlphaBarMatchesDirectProduct) {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const double oracle = direct_product(1000, 1e-4, 0.02);
  EXPECT_NEAR(s.alpha_bar(1000), oracle, 1e-15);
  EXPECT_LE(s.alpha_bar(1000), 1e-4);
}

TEST(Schedule, ConstantBetaIsPower) {
  const auto s = make_linear_schedule(10, 0.1, 0.1);
  EXPECT_NEAR(s.alpha_bar(10), std::pow(0.9, 10), 1e-15);
}

TEST(Schedule, InvariantsOnRandomSchedules) {
  Rng rng(11);
  for (int k = 0; k < 100; ++k) {
    const int T = 1 + static_cast<int>(rng.index(500));
    const double b0 = rng.uniform(1e-5, 0.1);
    const double b1 = rng.uniform(b0, 0.5);
    const auto s = make_linear_schedule(T, b0, b1);
    ASSERT_EQ(s.steps(), T);
    EXPECT_DOUBLE_EQ(s.betas.front(), b0);
    EXPECT_NEAR(s.betas.back(), T == 1 ? b0 : b1, 1e-15);
    for (int t = 1; t <= T; ++t) {
      EXPECT_GT(s.beta(t), 0.0);
      EXPECT_LT(s.beta(t), 1.0);
      EXPECT_EQ(s.alpha(t), 1.0 - s.beta(t));
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
  }
}

TEST(Schedule, RejectsInvalidBounds) {
  EXPECT_THROW(make_linear_schedule(0, 1e-4, 0.02), ConfigError);
  EXPECT_THROW(make_linear_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(make_linear_schedule(10, 0.03, 0.02), ConfigError);
  EXPECT_THROW(make_linear_schedule(10, 1e-4, 1.0), ConfigError);
  const auto s = make_linear_schedule(10, 0.1, 0.2);
  EXPECT_THROW(s.alpha(0), ArgumentError);
  EXPECT_THROW(s.alpha(11), ArgumentError);
}

TEST(QSample, ZeroNoiseScalesSignal) {
  const auto s = make_linear_schedule(100, 1e-3, 0.2);
  const Grid<double> x0(4, 5, 0.25);
  const Grid<double> eps(4, 5, 0.0);
  const auto ns = q_sample(x0, 37, eps, s);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_DOUBLE_EQ(ns.xt.data[i], std::sqrt(s.alpha_bar(37)) * 0.25);
}

TEST(QSample, TerminalStepApproachesNoise) {
  Rng rng(2);
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  Grid<double> x0(6, 6), eps(6, 6);
  for (auto& v : x0.data) v = rng.uniform(-1.0, 1.0);
  for (auto& v : eps.data) v = rng.normal();
  const auto ns = q_sample(x0, 1000, eps, s);
  double max_x0 = 0.0;
  for (double v : x0.data) max_x0 = std::max(max_x0, std::abs(v));
  const double tol = std::sqrt(s.alpha_bar(1000)) * max_x0 + (1.0 - std::sqrt(1.0 - s.alpha_bar(1000))) * 5.0;
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_NEAR(ns.xt.data[i], eps.data[i], tol);
}

TEST(QSample, ShapeAndRangeErrors) {
  const auto s = make_linear_schedule(10, 0.1, 0.2);
  EXPECT_THROW(q_sample(Grid<double>(2, 2), 1, Grid<double>(2, 3), s), ArgumentError);
  EXPECT_THROW(q_sample(Grid<double>(2, 2), 11, Grid<double>(2, 2), s), ArgumentError);
}

TEST(QSample, ComposedSingleStepKernelMatchesMarginal) {
  // Iterating x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) z reproduces the closed-form marginal.
  const auto s = make_linear_schedule(50, 1e-3, 0.1);
  Rng rng(3);
  const double x0 = 0.6;
  const int draws = 10000;
  for (int t : {1, 25, 50}) {
    double sum = 0.0, sq = 0.0;
    for (int d = 0; d < draws; ++d) {
      double x = x0;
      for (int k = 1; k <= t; ++k) x = std::sqrt(s.alpha(k)) * x + std::sqrt(s.beta(k)) * rng.normal();
      sum += x;
      sq += x * x;
    }
    const double mean = sum / draws, var = sq / draws - mean * mean;
    const double mean_ref = std::sqrt(s.alpha_bar(t)) * x0, var_ref = 1.0 - s.alpha_bar(t);
    EXPECT_NEAR(mean, mean_ref, 0.02 * std::max(std::abs(mean_ref), std::sqrt(var_ref)));
    EXPECT_NEAR(var, var_ref, 0.05 * var_ref);
  }
}

TEST(Posterior, TrueNoiseGivesClosedFormPosteriorMean) {
  const auto s = make_linear_schedule(200, 1e-3, 0.1);
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    const int t = 2 + static_cast<int>(rng.index(199));
    Grid<double> x0(3, 3), eps(3, 3);
    for (auto& v : x0.data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : eps.data) v = rng.normal();
    const auto xt = q_sample(x0, t, eps, s).xt;
    const auto p = posterior_mean_variance(xt, t, eps, s);
    const double ab = s.alpha_bar(t), abp = s.alpha_bar(t - 1);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const double oracle = std::sqrt(abp) * s.beta(t) / (1 - ab) * x0.data[i] +
                            std::sqrt(s.alpha(t)) * (1 - abp) / (1 - ab) * xt.data[i];
      EXPECT_NEAR(p.mu.data[i], oracle, 1e-9);
    }
    EXPECT_NEAR(p.sigma2, (1 - abp) / (1 - ab) * s.beta(t), 1e-15);
  }
}

TEST(Posterior, FinalStepHasZeroVarianceAndEmitsMean) {
  const auto s = make_linear_schedule(10, 0.1, 0.2);
  Grid<double> xt(2, 2, 0.3), eps(2, 2, 0.1);
  const auto p = posterior_mean_variance(xt, 1, eps, s);
  EXPECT_EQ(p.sigma2, 0.0);
  Rng rng(5);
  EXPECT_EQ(reverse_step(xt, 1, eps, s, rng), p.mu);
}

TEST(ReverseStep, DeterministicAndVarianceMatches) {
  const auto s = make_linear_schedule(20, 0.01, 0.2);
  Grid<double> xt(1, 1, 0.2), eps(1, 1, -0.4);
  Rng a(9), b(9);
  EXPECT_EQ(reverse_step(xt, 7, eps, s, a), reverse_step(xt, 7, eps, s, b));
  const auto p = posterior_mean_variance(xt, 7, eps, s);
  double sum = 0.0, sq = 0.0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    Rng rng(1000 + d);
    const double v = reverse_step(xt, 7, eps, s, rng).data[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / draws;
  EXPECT_NEAR(sq / draws - mean * mean, p.sigma2, 0.03 * p.sigma2);
}

TEST(AncestralSample, OracleDenoiserRecoversConstantImage) {
  const auto s = make_linear_schedule(100, 1e-3, 0.2);
  const double c = 0.7;  // external range
  const double c_int = 2 * c - 1;
  auto oracle = [&](const Grid<double>& xt, int t) {
    Grid<double> eps(xt.rows, xt.cols);
    const double ab = s.alpha_bar(t);
    for (std::size_t i = 0; i < xt.size(); ++i) eps.data[i] = (xt.data[i] - std::sqrt(ab) * c_int) / std::sqrt(1 - ab);
    return eps;
  };
  Grid<double> mean(4, 4, 0.0);
  for (int d = 0; d < 100; ++d) {
    Rng rng(d);
    const auto img = ancestral_sample<double>(oracle, s, 4, 4, rng);
    for (std::size_t i = 0; i < img.size(); ++i) {
      ASSERT_GE(img.data[i], 0.0);
      ASSERT_LE(img.data[i], 1.0);
      mean.data[i] += img.data[i] / 100.0;
    }
  }
  for (double v : mean.data) EXPECT_NEAR(v, c, 0.1);
}

TEST(AncestralSample, DeterministicAndRejectsBadDenoiser) {
  const auto s = make_linear_schedule(10, 0.01, 0.2);
  auto zero = [](const Grid<double>& xt, int) { return Grid<double>(xt.rows, xt.cols, 0.0); };
  Rng a(3), b(3);
  EXPECT_EQ(ancestral_sample<double>(zero, s, 3, 3, a), ancestral_sample<double>(zero, s, 3, 3, b));
  auto bad = [](const Grid<double>&, int) { return Grid<double>(1, 1, 0.0); };
  Rng c(3);
  EXPECT_THROW(ancestral_sample<double>(bad, s, 3, 3, c), ContractViolation);
}

TEST(SimpleLoss, Examples) {
  Rng rng(6);
  Grid<double> a(5, 5), b(5, 5);
  for (auto& v : a.data) v = rng.normal();
  for (auto& v : b.data) v = rng.normal();
  EXPECT_EQ(simple_loss(a, a).simple_loss, 0.0);
  EXPECT_EQ(simple_loss(Grid<double>(3, 3, 1.0), Grid<double>(3, 3, 0.0)).simple_loss, 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  EXPECT_NEAR(simple_loss(a, b).simple_loss, acc / 25.0, 1e-15);
  EXPECT_EQ(simple_loss(a, b).simple_loss, simple_loss(b, a).simple_loss);
  EXPECT_THROW(simple_loss(a, Grid<double>(2, 2)), ArgumentError);
}

TEST(Vlb, PriorTermOracle) {
  // One step with alpha_bar = 0.5 and x0 = 0: L_T = 4 * KL(N(0, 0.5) || N(0, 1)).
  const auto s = make_linear_schedule(1, 0.5, 0.5);
  const Grid<double> x0(2, 2, 0.0);
  std::vector<Grid<double>> noise{Grid<double>(2, 2, 0.3)};
  auto zero = [](const Grid<double>& xt, int) { return Grid<double>(xt.rows, xt.cols, 0.0); };
  const auto r = vlb_diagnostics(x0, std::span<const Grid<double>>(noise), zero, s);
  const double kl = 0.5 * (std::log(1.0 / 0.5) + 0.5 - 1.0);
  EXPECT_NEAR(r.vlb_terms->back(), 4 * kl, 1e-12);
}

TEST(Vlb, TrueNoiseZeroesTransitionTermsAndAllTermsNonnegative) {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  Rng rng(8);
  Grid<double> x0(4, 4);
  for (auto& v : x0.data) v = rng.uniform(-1.0, 1.0);
  std::vector<Grid<double>> noise(1000, Grid<double>(4, 4));
  for (auto& g : noise) {
    for (auto& v : g.data) v = rng.normal();
  }
  auto oracle = [&](const Grid<double>& xt, int t) {
    Grid<double> eps(xt.rows, xt.cols);
    for (std::size_t i = 0; i < xt.size(); ++i) {
      eps.data[i] = (xt.data[i] - std::sqrt(s.alpha_bar(t)) * x0.data[i]) / std::sqrt(1 - s.alpha_bar(t));
    }
    return eps;
  };
  const auto r = vlb_diagnostics(x0, std::span<const Grid<double>>(noise), oracle, s);
  ASSERT_EQ(r.vlb_terms->size(), 1001u);
  for (std::size_t t = 1; t < 1000; ++t) EXPECT_LE((*r.vlb_terms)[t], 1e-6);
  for (double v : *r.vlb_terms) EXPECT_GE(v, 0.0);
  EXPECT_LT(r.vlb_terms->back(), 1e-3);
}

}  // namespace
}  // namespace segdiff

// Copyright 2026 The NeuronLens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "neuronlens/counterfactual.hpp"
#include "neuronlens/errors.hpp"
#include "neuronlens/serialization.hpp"
#include "test_support.hpp"

namespace neuronlens {
namespace {

using testing::random_layer;
using testing::random_vector;
using testing::relative_error;

DecisionLayer<Real> diagonal_head() {
  DecisionLayer<Real> layer = DecisionLayer<Real>::zeros(2, 2);
  layer.coefficients << 2.0, 0.0,  //
      0.0, 2.0;
  return layer;
}

// Elastic-net objective on the 2x2 head, written out by hand.
Real diagonal_objective(Real w0, Real w1) {
  const Real z0 = 2.0 * (1.0 + w0), z1 = 2.0 * w1;
  const Real peak = std::max(z0, z1);
  const Real ce = peak + std::log(std::exp(z0 - peak) + std::exp(z1 - peak)) - z1;
  return ce + 0.1 * (std::abs(w0) + std::abs(w1)) + 0.01 * (w0 * w0 + w1 * w1);
}

OmegaResult flipped_result(std::vector<Real> values, std::string id) {
  OmegaResult r;
  r.omega = Eigen::Map<const FeatureVector>(values.data(), static_cast<Eigen::Index>(values.size()));
  r.flipped = true;
  r.sample_id = std::move(id);
  return r;
}

TEST(Counterfactual, DefaultsAreElasticNetWeights) {
  const CounterfactualConfig config;
  EXPECT_EQ(config.lambda1, 0.1);
  EXPECT_EQ(config.lambda2, 0.01);
  EXPECT_EQ(config.max_steps, 200);
}

TEST(Counterfactual, MatchesDenseGridSearchOracle) {
  // Frozen from the grid below: argmin over [-3, 3]^2 at 0.01 resolution.
  constexpr Real kGridW0 = -1.18, kGridW1 = 1.18, kGridValue = 0.32764382768380573;
  Real best = 1e300, b0 = 0.0, b1 = 0.0;
  for (int a = -300; a <= 300; ++a) {
    for (int b = -300; b <= 300; ++b) {
      const Real v = diagonal_objective(a * 0.01, b * 0.01);
      if (v < best) {
        best = v;
        b0 = a * 0.01;
        b1 = b * 0.01;
      }
    }
  }
  EXPECT_NEAR(b0, kGridW0, 1e-12);
  EXPECT_NEAR(b1, kGridW1, 1e-12);
  EXPECT_NEAR(best, kGridValue, 1e-12);

  FeatureVector f(2);
  f << 1.0, 0.0;
  const OmegaResult r = optimize_omega(f, 1, diagonal_head());
  EXPECT_TRUE(r.flipped);
  EXPECT_GT(r.omega(1), 0.0);
  EXPECT_LT(r.omega(0), 0.0);
  EXPECT_NEAR(r.omega(0), kGridW0, 0.01);
  EXPECT_NEAR(r.omega(1), kGridW1, 0.01);
  EXPECT_LE(r.final_loss, kGridValue + 1e-9);
  EXPECT_NEAR(r.final_loss, diagonal_objective(r.omega(0), r.omega(1)), 1e-12);
}

TEST(Counterfactual, StepZeroKeepsOriginalPrediction) {
  std::mt19937_64 rng(5);
  const DecisionLayer<Real> layer = random_layer(4, 6, rng);
  const FeatureVector f = random_vector(6, rng);
  CounterfactualConfig config;
  config.max_steps = 0;
  const OmegaResult r = optimize_omega(f, 2, layer, config);
  EXPECT_EQ(r.omega, FeatureVector::Zero(6));
  EXPECT_EQ(r.loss_trace.size(), 1u);
  EXPECT_EQ(r.flipped, argmax(logits(layer, f)) == 2);
}

TEST(Counterfactual, LossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  Real worst = 0.0;
  for (int point = 0; point < 10; ++point) {
    const DecisionLayer<Real> layer = random_layer(5, 7, rng);
    const FeatureVector f = random_vector(7, rng);
    FeatureVector omega = random_vector(7, rng, 0.5);
    for (Eigen::Index i = 0; i < omega.size(); ++i) {
      if (std::abs(omega(i)) < 1e-2) omega(i) = 0.05;  // stay clear of the l1 kink
    }
    const int target = point % 5;
    const auto analytic = counterfactual_loss(layer, f, omega, target, 0.1, 0.01);
    for (Eigen::Index i = 0; i < omega.size(); ++i) {
      const Real numeric = testing::central_difference(
          [&] { return counterfactual_loss(layer, f, omega, target, 0.1, 0.01).value; }, omega(i));
      worst = std::max(worst, relative_error(analytic.gradient(i), numeric));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Counterfactual, LossTraceIsNonIncreasingOnConvexHeads) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const DecisionLayer<Real> layer = random_layer(5, 12, rng);
    const FeatureVector f = random_vector(12, rng).cwiseAbs();
    CounterfactualConfig config;
    config.tolerance = 0.0;
    const OmegaResult r = optimize_omega(f, trial % 5, layer, config);
    ASSERT_EQ(r.loss_trace.size(), 201u);
    for (std::size_t s = 1; s < r.loss_trace.size(); ++s) {
      EXPECT_LE(r.loss_trace[s], r.loss_trace[s - 1] + 1e-12) << "trial " << trial << " step " << s;
    }
  }
}

TEST(Counterfactual, FlippedFlagMatchesArgmaxExactly) {
  std::mt19937_64 rng(37);
  int flips = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const DecisionLayer<Real> layer = random_layer(4, 6, rng, 0.5);
    const FeatureVector f = random_vector(6, rng);
    CounterfactualConfig config;
    config.max_steps = 5 + trial;  // some runs stop short of a flip
    const OmegaResult r = optimize_omega(f, trial % 4, layer, config);
    const bool lands = argmax(class_probabilities(layer, (f + r.omega).eval())) == trial % 4;
    EXPECT_EQ(r.flipped, lands);
    flips += r.flipped ? 1 : 0;
  }
  EXPECT_GT(flips, 0);
  EXPECT_LT(flips, 50);
}

TEST(Counterfactual, InvalidInputsAreRejected) {
  const DecisionLayer<Real> layer = diagonal_head();
  FeatureVector f(2);
  f << 1.0, 0.0;
  CounterfactualConfig negative;
  negative.lambda1 = -1.0;
  EXPECT_THROW(optimize_omega(f, 1, layer, negative), Error);
  EXPECT_THROW(optimize_omega(f, 2, layer), Error);
  try {
    optimize_omega(FeatureVector::Zero(3), 1, layer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Counterfactual, OversizedStepIsNonFinite) {
  DecisionLayer<Real> layer = diagonal_head();
  layer.coefficients *= 1e3;
  FeatureVector f(2);
  f << 1.0, 0.0;
  CounterfactualConfig config;
  config.step_size = 1e6;
  config.proximal = false;
  config.tolerance = 0.0;
  config.max_steps = 2000;
  try {
    optimize_omega(f, 1, layer, config);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteLoss);
    return;
  }
  GTEST_SKIP() << "step did not diverge on this head";
}

TEST(Ranking, SingleSampleWithFiveNonZeros) {
  const RankingReport report =
      rank_neurons({flipped_result({0, 0.3, 0, -0.2, 0.9, 0, 0.1, -0.05, 0}, "s0")});
  const std::vector<Real> expected{0, 1, 0, 1, 1, 0, 1, 1, 0};
  EXPECT_EQ(report.rank_rate, expected);
  EXPECT_EQ(report.per_sample_top.front(), (std::vector<int>{4, 1, 3, 6, 7}));
}

TEST(Ranking, ThreeVectorsMatchHandEnumeration) {
  const std::vector<OmegaResult> results{
      flipped_result({0.5, -0.4, 0.3, 0.0, 0.2, -0.1}, "a"),  // top: 0 1 2 4 5
      flipped_result({0.1, 0.1, 0.1, 0.1, 0.1, 0.1}, "b"),    // ties: 0 1 2 3 4
      flipped_result({0.0, 0.0, -0.9, 0.8, 0.0, 0.7}, "c"),   // three non-zeros: 2 3 5
  };
  const RankingReport report = rank_neurons(results);
  const std::vector<Real> rates{2.0 / 3, 2.0 / 3, 1.0, 2.0 / 3, 2.0 / 3, 2.0 / 3};
  for (int n = 0; n < 6; ++n) EXPECT_DOUBLE_EQ(report.rank_rate[static_cast<std::size_t>(n)], rates[static_cast<std::size_t>(n)]);
  const std::vector<Real> signed_means{0.3, -0.15, -0.5 / 3, 0.45, 0.15, 0.3};
  for (int n = 0; n < 6; ++n) {
    EXPECT_NEAR(report.mean_signed_omega[static_cast<std::size_t>(n)], signed_means[static_cast<std::size_t>(n)], 1e-15);
  }
  EXPECT_EQ(report.category[0], NeuronCategory::kInsufficient);
  EXPECT_EQ(report.category[1], NeuronCategory::kExcessive);
  EXPECT_EQ(report.category[2], NeuronCategory::kExcessive);
  EXPECT_EQ(report.per_sample_top[1], (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(report.per_sample_top[2], (std::vector<int>{2, 3, 5}));
  EXPECT_EQ(report.n_samples_used, 3);
}

TEST(Ranking, RateMassIsFivePerSampleForDenseOmega) {
  std::mt19937_64 rng(41);
  std::vector<OmegaResult> results;
  for (int i = 0; i < 30; ++i) results.push_back(flipped_result({}, "s" + std::to_string(i)));
  for (auto& r : results) r.omega = random_vector(16, rng);
  const RankingReport report = rank_neurons(results);
  Real mass = 0.0;
  for (Real rate : report.rank_rate) {
    EXPECT_GE(rate, 0.0);
    EXPECT_LE(rate, 1.0);
    mass += rate * report.n_samples_used;
  }
  EXPECT_NEAR(mass, 5.0 * report.n_samples_used, 1e-9);
  for (int n = 0; n < 16; ++n) {
    const Real m = report.mean_signed_omega[static_cast<std::size_t>(n)];
    if (m > 0) {
      EXPECT_EQ(report.category[static_cast<std::size_t>(n)], NeuronCategory::kInsufficient);
    } else if (m < 0) {
      EXPECT_EQ(report.category[static_cast<std::size_t>(n)], NeuronCategory::kExcessive);
    }
  }
}

TEST(Ranking, FlipFilterAndEmptySet) {
  OmegaResult stuck = flipped_result({1.0, 0.0, 0.0}, "stuck");
  stuck.flipped = false;
  const OmegaResult moved = flipped_result({0.0, 0.0, 2.0}, "moved");
  const RankingReport filtered = rank_neurons({stuck, moved});
  EXPECT_EQ(filtered.n_samples_total, 2);
  EXPECT_EQ(filtered.n_samples_used, 1);
  EXPECT_DOUBLE_EQ(filtered.flip_rate, 0.5);
  EXPECT_EQ(filtered.rank_rate, (std::vector<Real>{0, 0, 1}));

  const RankingReport all = rank_neurons({stuck, moved}, 5, false);
  EXPECT_EQ(all.rank_rate, (std::vector<Real>{0.5, 0, 0.5}));

  try {
    rank_neurons({stuck});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyMistakeSet);
  }
}

TEST(Ranking, CoreNeuronSelection) {
  RankingReport report;
  report.rank_rate = {0, 0, 1.0, 0, 0};
  EXPECT_EQ(select_core_neurons(report), (std::vector<int>{2}));

  report.rank_rate = {0.02, 0.5, 0.03, 0.0, 0.5, 0.9};
  EXPECT_EQ(select_core_neurons(report), (std::vector<int>{5, 1, 4, 2}));
  EXPECT_EQ(select_core_neurons(report, 0.0), (std::vector<int>{5, 1, 4, 2, 0}));
  EXPECT_THROW(select_core_neurons(report, 1.5), Error);
}

TEST(Ranking, ThresholdZeroCountBound) {
  std::mt19937_64 rng(43);
  std::vector<OmegaResult> results;
  for (int i = 0; i < 4; ++i) results.push_back(flipped_result({}, std::to_string(i)));
  for (auto& r : results) r.omega = random_vector(40, rng);
  const RankingReport report = rank_neurons(results);
  EXPECT_LE(select_core_neurons(report, 0.0).size(), 5u * 4u);
}

TEST(Ranking, IdenticalInputsGiveBitIdenticalReports) {
  std::mt19937_64 rng(47);
  std::vector<OmegaResult> results;
  for (int i = 0; i < 12; ++i) {
    OmegaResult r = flipped_result({}, "s" + std::to_string(i));
    r.omega = random_vector(10, rng);
    r.flipped = i % 3 != 0;
    results.push_back(r);
  }
  const Json a = rank_neurons(results);
  const Json b = rank_neurons(results);
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Ranking, JsonUsesSparseMapAndRoundTrips) {
  const RankingReport report = rank_neurons(
      {flipped_result({0.5, -0.4, 0.3, 0.0, 0.2, -0.1, 0.0}, "a"), flipped_result({0.0, 0.0, -0.9, 0.8, 0.0, 0.7, 0.0}, "b")});
  const Json j = report;
  EXPECT_FALSE(j.at("rank_rate").contains("6"));
  EXPECT_TRUE(j.at("rank_rate").contains("2"));
  const RankingReport back = j.get<RankingReport>();
  EXPECT_EQ(back.rank_rate, report.rank_rate);
  EXPECT_EQ(back.mean_signed_omega, report.mean_signed_omega);
  EXPECT_EQ(back.category, report.category);
  EXPECT_EQ(back.per_sample_top, report.per_sample_top);
  EXPECT_EQ(Json(back).dump(), j.dump());
}

TEST(Ranking, OmegaJsonIsDense) {
  OmegaResult r = flipped_result({0.0, 1.5, 0.0}, "x");
  r.loss_trace = {2.0, 1.0};
  const Json j = r;
  EXPECT_EQ(j.at("omega").size(), 3u);
  const OmegaResult back = j.get<OmegaResult>();
  EXPECT_EQ(back.omega, r.omega);
  EXPECT_EQ(back.loss_trace, r.loss_trace);
}

}  // namespace
}  // namespace neuronlens

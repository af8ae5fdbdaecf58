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

#pragma once

#include <string>
#include <vector>

#include "neuronlens/decision_layer.hpp"
#include "neuronlens/model.hpp"

namespace neuronlens {

template <typename Scalar>
struct LossAndGradient {
  Scalar value{};
  Vector<Scalar> gradient;
};

// Elastic-net counterfactual objective for features f, perturbation omega and
// the class the perturbed features should land in:
//   CE(W (f + omega) + b, target) + l1 * |omega|_1 + l2 * |omega|_2^2
// The l1 gradient uses sign(omega) with sign(0) = 0.
template <typename Scalar>
LossAndGradient<Scalar> counterfactual_loss(const DecisionLayer<Scalar>& layer,
                                            const Vector<Scalar>& features,
                                            const Vector<Scalar>& omega, int target,
                                            Scalar lambda1, Scalar lambda2) {
  const Vector<Scalar> z = logits(layer, (features + omega).eval());
  LossAndGradient<Scalar> out;
  out.value = cross_entropy(z, target) + lambda1 * omega.template lpNorm<1>() +
              lambda2 * omega.squaredNorm();
  out.gradient = layer.coefficients.transpose() * cross_entropy_logit_gradient(z, target) +
                 lambda1 * omega.array().sign().matrix() + Scalar(2) * lambda2 * omega;
  return out;
}

template <typename Scalar>
Vector<Scalar> soft_threshold(const Vector<Scalar>& v, Scalar threshold) {
  return (v.array().abs() - threshold).max(Scalar(0)).matrix().cwiseProduct(
      v.array().sign().matrix());
}

struct CounterfactualConfig {
  Real lambda1 = 0.1;
  Real lambda2 = 0.01;
  int max_steps = 200;
  // <= 0 selects 1 / L with L = ||W||_2^2 / 2 + 2 * lambda2, an upper bound
  // on the curvature of the smooth part, which keeps every step a descent step.
  Real step_size = 0.0;
  bool proximal = true;
  // Stop once no coordinate moves by more than this (0 disables).
  Real tolerance = 1e-9;
};

struct OmegaResult {
  FeatureVector omega;
  bool flipped = false;
  int steps_used = 0;
  Real final_loss = 0.0;
  std::string sample_id;
  int target_class = 0;
  std::vector<Real> loss_trace;  // objective after each step, entry 0 = at omega = 0
};

Real default_counterfactual_step(const DecisionLayer<Real>& layer, Real lambda2);

OmegaResult optimize_omega(const FeatureVector& features, int target_class,
                           const DecisionLayer<Real>& layer,
                           const CounterfactualConfig& config = {},
                           std::string sample_id = {});

enum class NeuronCategory { kExcessive, kInsufficient, kMixed };

std::string_view category_name(NeuronCategory category);

struct RankingReport {
  int k = 5;
  int n_samples_used = 0;
  int n_samples_total = 0;
  Real flip_rate = 0.0;
  std::vector<Real> rank_rate;           // per neuron, in [0, 1]
  std::vector<Real> mean_signed_omega;   // over samples where the neuron ranked
  std::vector<NeuronCategory> category;  // from the sign of mean_signed_omega
  std::vector<std::string> sample_ids;   // samples that passed the filter
  std::vector<std::vector<int>> per_sample_top;  // ranked neuron ids per sample

  int feature_dim() const { return static_cast<int>(rank_rate.size()); }
};

// Neurons ordered by |omega| descending, ties to the lower index. Entries with
// omega == 0 never rank, so fewer than k ids come back for very sparse omega.
std::vector<int> top_k_by_magnitude(const FeatureVector& omega, int k);

RankingReport rank_neurons(const std::vector<OmegaResult>& results, int k = 5,
                           bool flipped_only = true);

std::vector<int> select_core_neurons(const RankingReport& report, Real threshold = 0.03);

}  // namespace neuronlens

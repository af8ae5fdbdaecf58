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

#include "neuronlens/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neuronlens {

Real default_counterfactual_step(const DecisionLayer<Real>& layer, Real lambda2) {
  const Eigen::JacobiSVD<Matrix<Real>> svd(layer.coefficients);
  const Real sigma = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
  const Real curvature = 0.5 * sigma * sigma + 2.0 * lambda2;
  return curvature > 0.0 ? 1.0 / curvature : 1.0;
}

OmegaResult optimize_omega(const FeatureVector& features, int target_class,
                           const DecisionLayer<Real>& layer, const CounterfactualConfig& config,
                           std::string sample_id) {
  require_feature_dim(layer, features);
  if (target_class < 0 || target_class >= layer.num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "target class out of range");
  }
  if (config.lambda1 < 0 || config.lambda2 < 0) {
    throw Error(ErrorCode::kInvalidArgument, "regularization weights must be non-negative");
  }
  const Real step = config.step_size > 0 ? config.step_size
                                         : default_counterfactual_step(layer, config.lambda2);

  OmegaResult result;
  result.sample_id = std::move(sample_id);
  result.target_class = target_class;
  result.omega = FeatureVector::Zero(features.size());

  auto objective = [&](const FeatureVector& omega) {
    return counterfactual_loss(layer, features, omega, target_class, config.lambda1,
                               config.lambda2);
  };

  LossAndGradient<Real> current = objective(result.omega);
  result.loss_trace.push_back(current.value);
  for (int s = 0; s < config.max_steps; ++s) {
    FeatureVector next;
    if (config.proximal) {
      // Gradient step on the smooth part, then shrink for the l1 term.
      const FeatureVector smooth =
          current.gradient - config.lambda1 * result.omega.array().sign().matrix();
      next = soft_threshold<Real>(result.omega - step * smooth, step * config.lambda1);
    } else {
      next = result.omega - step * current.gradient;
    }
    const Real moved = (next - result.omega).lpNorm<Eigen::Infinity>();
    result.omega = std::move(next);
    current = objective(result.omega);
    result.steps_used = s + 1;
    if (!std::isfinite(current.value) || !result.omega.allFinite()) {
      throw Error(ErrorCode::kNonFiniteLoss,
                  "counterfactual objective diverged at step " + std::to_string(s + 1) +
                      "; reduce the step size");
    }
    result.loss_trace.push_back(current.value);
    if (config.tolerance > 0 && moved < config.tolerance) break;
  }
  result.final_loss = current.value;
  result.flipped = argmax(logits(layer, (features + result.omega).eval())) == target_class;
  return result;
}

std::string_view category_name(NeuronCategory category) {
  switch (category) {
    case NeuronCategory::kExcessive: return "excessive";
    case NeuronCategory::kInsufficient: return "insufficient";
    case NeuronCategory::kMixed: return "mixed";
  }
  return "mixed";
}

std::vector<int> top_k_by_magnitude(const FeatureVector& omega, int k) {
  std::vector<int> order;
  for (Eigen::Index i = 0; i < omega.size(); ++i) {
    if (omega(i) != 0.0) order.push_back(static_cast<int>(i));
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(omega(a)) > std::abs(omega(b));
  });
  if (static_cast<int>(order.size()) > k) order.resize(static_cast<std::size_t>(k));
  return order;
}

RankingReport rank_neurons(const std::vector<OmegaResult>& results, int k, bool flipped_only) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  RankingReport report;
  report.k = k;
  report.n_samples_total = static_cast<int>(results.size());
  if (results.empty()) throw Error(ErrorCode::kEmptyMistakeSet, "no counterfactual results");

  const Eigen::Index dim = results.front().omega.size();
  int flipped = 0;
  std::vector<int> counts(static_cast<std::size_t>(dim), 0);
  std::vector<Real> signed_sum(static_cast<std::size_t>(dim), 0.0);
  for (const auto& r : results) {
    if (r.omega.size() != dim) {
      throw Error(ErrorCode::kShapeMismatch, "counterfactual results disagree on D");
    }
    if (r.flipped) ++flipped;
    if (flipped_only && !r.flipped) continue;
    std::vector<int> top = top_k_by_magnitude(r.omega, k);
    for (int n : top) {
      ++counts[static_cast<std::size_t>(n)];
      signed_sum[static_cast<std::size_t>(n)] += r.omega(n);
    }
    report.sample_ids.push_back(r.sample_id);
    report.per_sample_top.push_back(std::move(top));
  }
  report.n_samples_used = static_cast<int>(report.per_sample_top.size());
  report.flip_rate = static_cast<Real>(flipped) / static_cast<Real>(results.size());
  if (report.n_samples_used == 0) {
    throw Error(ErrorCode::kEmptyMistakeSet, "no counterfactual result passed the flip filter");
  }

  report.rank_rate.resize(static_cast<std::size_t>(dim));
  report.mean_signed_omega.resize(static_cast<std::size_t>(dim));
  report.category.resize(static_cast<std::size_t>(dim));
  for (std::size_t n = 0; n < static_cast<std::size_t>(dim); ++n) {
    report.rank_rate[n] = static_cast<Real>(counts[n]) / report.n_samples_used;
    report.mean_signed_omega[n] = counts[n] > 0 ? signed_sum[n] / counts[n] : 0.0;
    const Real m = report.mean_signed_omega[n];
    report.category[n] = m > 0   ? NeuronCategory::kInsufficient
                         : m < 0 ? NeuronCategory::kExcessive
                                 : NeuronCategory::kMixed;
  }
  return report;
}

std::vector<int> select_core_neurons(const RankingReport& report, Real threshold) {
  if (threshold < 0 || threshold > 1) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must lie in [0, 1]");
  }
  std::vector<int> ids;
  for (int n = 0; n < report.feature_dim(); ++n) {
    const Real rate = report.rank_rate[static_cast<std::size_t>(n)];
    if (rate > 0 && rate >= threshold) ids.push_back(n);
  }
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return report.rank_rate[static_cast<std::size_t>(a)] >
           report.rank_rate[static_cast<std::size_t>(b)];
  });
  return ids;
}

}  // namespace neuronlens

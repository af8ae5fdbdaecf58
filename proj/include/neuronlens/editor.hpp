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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "neuronlens/decision_layer.hpp"
#include "neuronlens/model.hpp"
#include "neuronlens/scenarios.hpp"

namespace neuronlens {

// log(p_i / p'_i), where p' is the softmax with feature k replaced by zero.
// Closed form through the substitution s_j = exp(alpha_k * beta_{j,k}):
//   p_i / p'_i = sum_j exp(l'_j) / sum_j exp(alpha_k (beta_{j,k} - beta_{i,k})) exp(l'_j)
// evaluated with log-sum-exp on both sums.
template <typename Scalar>
Scalar log_probability_ratio(const DecisionLayer<Scalar>& layer, const Vector<Scalar>& features,
                             int class_id, int neuron_id) {
  const Scalar alpha = features(neuron_id);
  const Vector<Scalar> zeroed_logits =
      logits(layer, features) - layer.coefficients.col(neuron_id) * alpha;
  const Vector<Scalar> shift =
      alpha * (layer.coefficients.col(neuron_id).array() -
               layer.coefficients(class_id, neuron_id)).matrix();
  return log_sum_exp(zeroed_logits) - log_sum_exp((zeroed_logits + shift).eval());
}

// Same quantity by recomputing both softmaxes directly.
template <typename Scalar>
Scalar log_probability_ratio_direct(const DecisionLayer<Scalar>& layer,
                                    const Vector<Scalar>& features, int class_id, int neuron_id) {
  Vector<Scalar> zeroed = features;
  zeroed(neuron_id) = Scalar(0);
  return log_softmax(logits(layer, features))(class_id) -
         log_softmax(logits(layer, zeroed))(class_id);
}

// Gradient of log(p_i / p'_i) w.r.t. the decision layer, added into `grad`
// scaled by `weight`. With p = softmax(l) and p' = softmax(l'):
//   d/d b_j         = p'_j - p_j
//   d/d beta_{j,m}  = (p'_j - p_j) alpha_m            (m != k)
//   d/d beta_{j,k}  = -p_j alpha_k + [j == i] alpha_k
template <typename Scalar>
void accumulate_log_ratio_gradient(const DecisionLayer<Scalar>& layer,
                                   const Vector<Scalar>& features, int class_id, int neuron_id,
                                   Scalar weight, DecisionLayer<Scalar>& grad) {
  const Scalar alpha = features(neuron_id);
  const Vector<Scalar> full = logits(layer, features);
  const Vector<Scalar> p = softmax(full);
  const Vector<Scalar> p_zeroed = softmax((full - layer.coefficients.col(neuron_id) * alpha).eval());
  const Vector<Scalar> delta = p_zeroed - p;
  Vector<Scalar> masked = features;
  masked(neuron_id) = Scalar(0);
  grad.coefficients.noalias() += weight * delta * masked.transpose();
  grad.bias += weight * delta;
  grad.coefficients.col(neuron_id) -= weight * alpha * p;
  grad.coefficients(class_id, neuron_id) += weight * alpha;
}

struct EditTarget {
  int class_id = 0;
  int neuron_id = 0;

  friend bool operator==(const EditTarget&, const EditTarget&) = default;
};

enum class PenaltyForm {
  kNorm,     // || r - o ||_2 over the batch
  kSquared,  // || r - o ||_2^2, same zero set, smooth at the optimum
};

template <typename Scalar>
struct PenaltyValue {
  Scalar value{};
  DecisionLayer<Scalar> gradient;
};

// Probability-ratio penalty summed over targets. For each target the per-sample
// ratios of the batch form a vector whose distance to `o` is penalized.
template <typename Scalar>
PenaltyValue<Scalar> ratio_penalty(const DecisionLayer<Scalar>& layer,
                                   const std::vector<Vector<Scalar>>& batch,
                                   const std::vector<EditTarget>& targets, Scalar o,
                                   PenaltyForm form = PenaltyForm::kNorm) {
  PenaltyValue<Scalar> out{Scalar(0),
                           DecisionLayer<Scalar>::zeros(layer.num_classes(), layer.feature_dim())};
  std::vector<Scalar> ratios(batch.size());
  for (const auto& t : targets) {
    Scalar squared = Scalar(0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      ratios[b] = std::exp(log_probability_ratio(layer, batch[b], t.class_id, t.neuron_id));
      squared += (ratios[b] - o) * (ratios[b] - o);
    }
    Scalar outer;  // d penalty / d (r_b - o) = outer * (r_b - o)
    if (form == PenaltyForm::kSquared) {
      out.value += squared;
      outer = Scalar(2);
    } else {
      const Scalar norm = std::sqrt(squared);
      out.value += norm;
      if (norm == Scalar(0)) continue;
      outer = Scalar(1) / norm;
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
      // d r / d theta = r * d log r / d theta
      const Scalar w = outer * (ratios[b] - o) * ratios[b];
      accumulate_log_ratio_gradient(layer, batch[b], t.class_id, t.neuron_id, w, out.gradient);
    }
  }
  return out;
}

// Coefficient-shrinking penalty: sum over targets of
// || alpha_k * beta_{i,k} + b_i ||_2 across the batch.
template <typename Scalar>
PenaltyValue<Scalar> coefficient_penalty(const DecisionLayer<Scalar>& layer,
                                         const std::vector<Vector<Scalar>>& batch,
                                         const std::vector<EditTarget>& targets) {
  PenaltyValue<Scalar> out{Scalar(0),
                           DecisionLayer<Scalar>::zeros(layer.num_classes(), layer.feature_dim())};
  std::vector<Scalar> terms(batch.size());
  for (const auto& t : targets) {
    Scalar squared = Scalar(0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      terms[b] = batch[b](t.neuron_id) * layer.coefficients(t.class_id, t.neuron_id) +
                 layer.bias(t.class_id);
      squared += terms[b] * terms[b];
    }
    const Scalar norm = std::sqrt(squared);
    out.value += norm;
    if (norm == Scalar(0)) continue;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Scalar w = terms[b] / norm;
      out.gradient.coefficients(t.class_id, t.neuron_id) += w * batch[b](t.neuron_id);
      out.gradient.bias(t.class_id) += w;
    }
  }
  return out;
}

// Mean cross-entropy of the batch and its gradient.
template <typename Scalar>
PenaltyValue<Scalar> batch_cross_entropy(const DecisionLayer<Scalar>& layer,
                                         const std::vector<Vector<Scalar>>& batch,
                                         const std::vector<int>& labels) {
  PenaltyValue<Scalar> out{Scalar(0),
                           DecisionLayer<Scalar>::zeros(layer.num_classes(), layer.feature_dim())};
  const Scalar inv = Scalar(1) / static_cast<Scalar>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Vector<Scalar> z = logits(layer, batch[b]);
    out.value += inv * cross_entropy(z, labels[b]);
    const Vector<Scalar> dz = inv * cross_entropy_logit_gradient(z, labels[b]);
    out.gradient.coefficients.noalias() += dz * batch[b].transpose();
    out.gradient.bias += dz;
  }
  return out;
}

struct RatioReport {
  int class_id = 0;
  int neuron_id = 0;
  Real ratio = 1.0;
  Real direct_ratio = 1.0;          // softmax recomputed with the feature zeroed
  Vector<Real> substitution_terms;  // exp(alpha_k (beta_{j,k} - beta_{i,k})) per class j
  FeatureVector features_used;
};

RatioReport probability_ratio(const DecisionLayer<Real>& layer, const FeatureVector& features,
                              int class_id, int neuron_id);

// o = (r_min - 1) / 3 + 1 with r_min the smallest ratio over the targets,
// evaluated at `mean_features`.
Real suggest_o(const DecisionLayer<Real>& layer, const FeatureVector& mean_features,
               const std::vector<EditTarget>& targets);

FeatureVector mean_feature(const std::vector<FeatureVector>& features);

enum class CheckpointRule { kBestValidation, kMinClassAccuracy };
enum class Schedule { kConstant, kCosine, kWarmupCosine };
enum class EditMethod { kRatio, kCoefficient, kNone };

std::string_view method_name(EditMethod method);

struct EditPlan {
  std::vector<EditTarget> targets;
  Real o = 1.0;
  Real lambda3 = 1.0;
  int epochs = 20;
  Real learning_rate = 1e-3;
  int batch_size = 16;
  Schedule schedule = Schedule::kCosine;
  int warmup_epochs = 1;
  Real weight_decay = 0.0;
  int patience = 5;  // validation checks without improvement before stopping
  CheckpointRule checkpoint_rule = CheckpointRule::kBestValidation;
  std::uint64_t seed = 0;
};

void validate(const EditPlan& plan, EditMethod method, int num_classes, int feature_dim);

struct EpochRecord {
  int epoch = 0;
  Real learning_rate = 0.0;
  Real train_cross_entropy = 0.0;
  Real regularizer = 0.0;
  Real val_accuracy = 0.0;
  Real val_min_class_accuracy = 0.0;
};

struct EditOutcome {
  EditMethod method = EditMethod::kRatio;
  EditPlan plan;
  DecisionLayer<Real> original_layer;
  DecisionLayer<Real> edited_layer;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  Real initial_train_cross_entropy = 0.0;
  Real val_accuracy_before = 0.0;
  Real val_accuracy_after = 0.0;
  std::uint64_t extractor_checksum_before = 0;
  std::uint64_t extractor_checksum_after = 0;
};

// Core loop on precomputed features (the extractor is frozen, so features are
// computed once). Each batch minimizes mean CE + lambda3 * penalty.
EditOutcome train_decision_layer(const DecisionLayer<Real>& initial, const LabeledFeatures& train,
                                 const LabeledFeatures& validation, const EditPlan& plan,
                                 EditMethod method);

EditOutcome edit_decision_layer(const ClassifierHandle& handle, const Split& train,
                                const Split& validation, const EditPlan& plan);

EditOutcome con_baseline(const ClassifierHandle& handle, const Split& train,
                         const Split& validation, const std::vector<EditTarget>& targets,
                         int epochs, Real learning_rate);

// Variant of con_baseline taking the full schedule, so paired runs can share
// every setting but the penalty.
EditOutcome con_baseline(const ClassifierHandle& handle, const Split& train,
                         const Split& validation, const EditPlan& plan);

}  // namespace neuronlens

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

#include "neuronlens/editor.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "neuronlens/optim.hpp"

namespace neuronlens {
namespace {

struct Accuracy {
  Real overall = 0.0;
  Real min_class = 0.0;
};

Accuracy accuracy_of(const DecisionLayer<Real>& layer, const LabeledFeatures& data) {
  if (data.size() == 0) return {};
  std::vector<int> correct(static_cast<std::size_t>(layer.num_classes()), 0);
  std::vector<int> total(static_cast<std::size_t>(layer.num_classes()), 0);
  int hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int label = data.labels[i];
    const bool ok = argmax(logits(layer, data.features[i])) == label;
    hits += ok ? 1 : 0;
    ++total[static_cast<std::size_t>(label)];
    correct[static_cast<std::size_t>(label)] += ok ? 1 : 0;
  }
  Accuracy acc;
  acc.overall = static_cast<Real>(hits) / static_cast<Real>(data.size());
  acc.min_class = 1.0;
  for (std::size_t c = 0; c < total.size(); ++c) {
    if (total[c] > 0) acc.min_class = std::min(acc.min_class, static_cast<Real>(correct[c]) / total[c]);
  }
  return acc;
}

Real mean_cross_entropy(const DecisionLayer<Real>& layer, const LabeledFeatures& data) {
  Real sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    sum += cross_entropy(logits(layer, data.features[i]), data.labels[i]);
  }
  return data.size() > 0 ? sum / static_cast<Real>(data.size()) : 0.0;
}

Real scheduled_rate(const EditPlan& plan, int step, int warmup_steps, int total_steps) {
  switch (plan.schedule) {
    case Schedule::kConstant: return plan.learning_rate;
    case Schedule::kCosine: return cosine_annealing(plan.learning_rate, step, total_steps);
    case Schedule::kWarmupCosine:
      return warmup_cosine(plan.learning_rate, step, warmup_steps, total_steps);
  }
  return plan.learning_rate;
}

}  // namespace

RatioReport probability_ratio(const DecisionLayer<Real>& layer, const FeatureVector& features,
                              int class_id, int neuron_id) {
  require_feature_dim(layer, features);
  if (class_id < 0 || class_id >= layer.num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "class id out of range");
  }
  if (neuron_id < 0 || neuron_id >= layer.feature_dim()) {
    throw Error(ErrorCode::kNeuronOutOfRange, "neuron id out of range");
  }
  if (!features.allFinite() || !layer.coefficients.allFinite() || !layer.bias.allFinite()) {
    throw Error(ErrorCode::kNumericOverflow, "non-finite features or weights");
  }
  RatioReport report;
  report.class_id = class_id;
  report.neuron_id = neuron_id;
  report.features_used = features;
  const Real alpha = features(neuron_id);
  report.substitution_terms =
      (alpha * (layer.coefficients.col(neuron_id).array() - layer.coefficients(class_id, neuron_id)))
          .exp()
          .matrix();
  report.ratio = std::exp(log_probability_ratio(layer, features, class_id, neuron_id));
  report.direct_ratio = std::exp(log_probability_ratio_direct(layer, features, class_id, neuron_id));
  if (!std::isfinite(report.ratio)) {
    throw Error(ErrorCode::kNumericOverflow, "probability ratio overflowed");
  }
  return report;
}

Real suggest_o(const DecisionLayer<Real>& layer, const FeatureVector& mean_features,
               const std::vector<EditTarget>& targets) {
  if (targets.empty()) throw Error(ErrorCode::kInvalidArgument, "no edit targets");
  Real lowest = std::numeric_limits<Real>::infinity();
  for (const auto& t : targets) {
    lowest = std::min(lowest, probability_ratio(layer, mean_features, t.class_id, t.neuron_id).ratio);
  }
  return (lowest - 1.0) / 3.0 + 1.0;
}

FeatureVector mean_feature(const std::vector<FeatureVector>& features) {
  if (features.empty()) throw Error(ErrorCode::kInvalidArgument, "mean of no features");
  FeatureVector sum = FeatureVector::Zero(features.front().size());
  for (const auto& f : features) sum += f;
  return sum / static_cast<Real>(features.size());
}

std::string_view method_name(EditMethod method) {
  switch (method) {
    case EditMethod::kRatio: return "ratio";
    case EditMethod::kCoefficient: return "con";
    case EditMethod::kNone: return "finetune";
  }
  return "ratio";
}

void validate(const EditPlan& plan, EditMethod method, int num_classes, int feature_dim) {
  if (method != EditMethod::kNone && plan.targets.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "edit plan has no targets");
  }
  if (!(plan.o > 0)) throw Error(ErrorCode::kInvalidArgument, "o must be positive");
  if (plan.lambda3 < 0) throw Error(ErrorCode::kInvalidArgument, "lambda3 must be non-negative");
  if (plan.epochs < 1 || plan.batch_size < 1 || !(plan.learning_rate > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "epochs, batch size and learning rate must be positive");
  }
  for (const auto& t : plan.targets) {
    if (t.class_id < 0 || t.class_id >= num_classes) {
      throw Error(ErrorCode::kInvalidArgument, "edit target class out of range");
    }
    if (t.neuron_id < 0 || t.neuron_id >= feature_dim) {
      throw Error(ErrorCode::kNeuronOutOfRange, "edit target neuron out of range");
    }
  }
}

EditOutcome train_decision_layer(const DecisionLayer<Real>& initial, const LabeledFeatures& train,
                                 const LabeledFeatures& validation, const EditPlan& plan,
                                 EditMethod method) {
  validate(plan, method, initial.num_classes(), initial.feature_dim());
  if (train.size() == 0) throw Error(ErrorCode::kEmptySplit, "no training samples");

  EditOutcome outcome;
  outcome.method = method;
  outcome.plan = plan;
  outcome.original_layer = initial;
  outcome.initial_train_cross_entropy = mean_cross_entropy(initial, train);
  outcome.val_accuracy_before = accuracy_of(initial, validation).overall;

  DecisionLayer<Real> layer = initial;
  AdamW<Real> optimizer({0.9, 0.999, 1e-8, plan.weight_decay});
  std::mt19937_64 rng(plan.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  const int steps_per_epoch =
      static_cast<int>((train.size() + static_cast<std::size_t>(plan.batch_size) - 1) /
                       static_cast<std::size_t>(plan.batch_size));
  const int total_steps = steps_per_epoch * plan.epochs;
  const int warmup_steps = plan.warmup_epochs * steps_per_epoch;
  const Real penalty_weight = method == EditMethod::kCoefficient ? 1.0 : plan.lambda3;

  Real best_score = -std::numeric_limits<Real>::infinity();
  DecisionLayer<Real> best = layer;
  int stale = 0;
  int step = 0;
  std::vector<FeatureVector> batch;
  std::vector<int> labels;
  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Real ce_sum = 0.0;
    Real reg_sum = 0.0;
    Real lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(plan.batch_size));
      batch.clear();
      labels.clear();
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(train.features[order[i]]);
        labels.push_back(train.labels[order[i]]);
      }
      PenaltyValue<Real> total = batch_cross_entropy(layer, batch, labels);
      ce_sum += total.value * static_cast<Real>(batch.size());
      if (method != EditMethod::kNone && penalty_weight > 0) {
        const PenaltyValue<Real> pen =
            method == EditMethod::kRatio ? ratio_penalty(layer, batch, plan.targets, plan.o)
                                         : coefficient_penalty(layer, batch, plan.targets);
        reg_sum += penalty_weight * pen.value;
        total.gradient.coefficients += penalty_weight * pen.gradient.coefficients;
        total.gradient.bias += penalty_weight * pen.gradient.bias;
      }
      if (!total.gradient.coefficients.allFinite() || !total.gradient.bias.allFinite()) {
        throw Error(ErrorCode::kDivergenceDetected, "non-finite gradient during decision-layer training");
      }
      lr = scheduled_rate(plan, step, warmup_steps, total_steps);
      const std::span<Real> params[] = {
          {layer.coefficients.data(), static_cast<std::size_t>(layer.coefficients.size())},
          {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}};
      const std::span<const Real> grads[] = {
          {total.gradient.coefficients.data(), static_cast<std::size_t>(total.gradient.coefficients.size())},
          {total.gradient.bias.data(), static_cast<std::size_t>(total.gradient.bias.size())}};
      optimizer.step(params, grads, lr);
      ++step;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    record.train_cross_entropy = ce_sum / static_cast<Real>(train.size());
    record.regularizer = reg_sum / steps_per_epoch;
    if (!std::isfinite(record.train_cross_entropy) ||
        record.train_cross_entropy > 10.0 * std::max(outcome.initial_train_cross_entropy, 1e-12)) {
      throw Error(ErrorCode::kDivergenceDetected,
                  "train cross-entropy rose above 10x its initial value at epoch " +
                      std::to_string(epoch));
    }
    const Accuracy val = accuracy_of(layer, validation.size() > 0 ? validation : train);
    record.val_accuracy = val.overall;
    record.val_min_class_accuracy = val.min_class;
    outcome.history.push_back(record);

    const Real score =
        plan.checkpoint_rule == CheckpointRule::kBestValidation ? val.overall : val.min_class;
    if (score > best_score) {
      best_score = score;
      best = layer;
      outcome.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= plan.patience) {
      break;
    }
  }
  outcome.edited_layer = std::move(best);
  outcome.val_accuracy_after = accuracy_of(outcome.edited_layer, validation).overall;
  return outcome;
}

EditOutcome edit_decision_layer(const ClassifierHandle& handle, const Split& train,
                                const Split& validation, const EditPlan& plan) {
  const std::uint64_t before = parameter_checksum(handle.backbone());
  EditOutcome outcome =
      train_decision_layer(handle.layer(), features_for_split(handle, train),
                           features_for_split(handle, validation), plan, EditMethod::kRatio);
  outcome.extractor_checksum_before = before;
  outcome.extractor_checksum_after = parameter_checksum(handle.backbone());
  return outcome;
}

EditOutcome con_baseline(const ClassifierHandle& handle, const Split& train,
                         const Split& validation, const EditPlan& plan) {
  const std::uint64_t before = parameter_checksum(handle.backbone());
  EditOutcome outcome =
      train_decision_layer(handle.layer(), features_for_split(handle, train),
                           features_for_split(handle, validation), plan, EditMethod::kCoefficient);
  outcome.extractor_checksum_before = before;
  outcome.extractor_checksum_after = parameter_checksum(handle.backbone());
  return outcome;
}

EditOutcome con_baseline(const ClassifierHandle& handle, const Split& train,
                         const Split& validation, const std::vector<EditTarget>& targets,
                         int epochs, Real learning_rate) {
  EditPlan plan;
  plan.targets = targets;
  plan.epochs = epochs;
  plan.learning_rate = learning_rate;
  return con_baseline(handle, train, validation, plan);
}

}  // namespace neuronlens

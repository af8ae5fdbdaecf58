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

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "neuronlens/counterfactual.hpp"
#include "neuronlens/model.hpp"
#include "neuronlens/scenarios.hpp"

namespace neuronlens {

// Stored predictions for one split. Every metric below is computed from these
// by counting, so cached predictions reproduce a report exactly.
struct SplitPredictions {
  std::string split_name;
  std::vector<std::string> sample_ids;
  std::vector<int> labels;
  std::vector<int> groups;  // -1 where unknown
  std::vector<int> predicted;

  std::size_t size() const { return labels.size(); }
};

SplitPredictions predict_split(const ClassifierHandle& handle, const Split& split);

// Same, from features already extracted for `split` (in sample order).
SplitPredictions predict_split(const DecisionLayer<Real>& layer, const LabeledFeatures& features,
                               const Split& split);

// Identity of the evaluated samples: hash over ids and labels in order.
std::uint64_t split_fingerprint(const SplitPredictions& predictions);

struct MetricsReport {
  std::string split_name;
  std::uint64_t split_fingerprint = 0;
  int n_samples = 0;
  int n_correct = 0;
  Real avg_acc = 0.0;
  std::map<int, Real> per_class_acc;  // classes present in the split
  std::pair<int, Real> worst_class{-1, 0.0};
  std::map<int, Real> per_group_acc;
  std::optional<std::pair<int, Real>> worst_group;
  std::vector<std::string> class_names;
};

// `group_labels`, when given, overrides the groups stored with the samples
// and must match the split length. Worst-group accuracy is reported only when
// at least one sample carries a group.
MetricsReport evaluate(const SplitPredictions& predictions,
                       const std::vector<std::string>& class_names = {},
                       const std::vector<int>* group_labels = nullptr);

MetricsReport evaluate(const ClassifierHandle& handle, const Split& split,
                       const std::vector<int>* group_labels = nullptr);

// Fraction of ranked samples whose first k neurons include a target.
Real precision_at_k(const RankingReport& report, const std::vector<int>& target_neurons, int k = 3);

// Everything compare_edits needs from one side of an edit.
struct EvaluationSnapshot {
  std::string scenario;
  MetricsReport metrics;
  std::optional<RankingReport> ranking;
  std::vector<int> target_neurons;
  int k = 3;
};

struct DeltaRow {
  std::string scenario;
  Real acc_before = 0.0;
  Real acc_after = 0.0;
  Real delta_acc = 0.0;
  Real worst_class_before = 0.0;
  Real worst_class_after = 0.0;
  Real delta_worst_class = 0.0;
  std::optional<Real> prec_before;
  std::optional<Real> prec_after;
  std::optional<Real> delta_prec_at_k;
};

struct DeltaReport {
  int k = 3;
  // Means over rows; with a single row they equal that row's deltas.
  Real delta_acc = 0.0;
  std::optional<Real> delta_prec_at_k;
  std::vector<DeltaRow> rows;
};

DeltaReport compare_edits(const EvaluationSnapshot& before, const EvaluationSnapshot& after);

DeltaReport compare_edits(std::span<const std::pair<EvaluationSnapshot, EvaluationSnapshot>> scenarios);

// Plain-text tables, one row per class (metrics) or per scenario (deltas).
std::string format_table(const MetricsReport& report);
std::string format_table(const DeltaReport& report);

}  // namespace neuronlens

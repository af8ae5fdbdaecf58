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

#include "neuronlens/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "neuronlens/errors.hpp"
#include "neuronlens/hashing.hpp"

namespace neuronlens {
namespace {

std::string fixed(Real value, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, value);
  return buf;
}

std::string signed_fixed(Real value, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.*f", precision, value);
  return buf;
}

std::string pad(const std::string& text, std::size_t width) {
  return text.size() >= width ? text : text + std::string(width - text.size(), ' ');
}

template <typename Key>
std::pair<Key, Real> minimum_entry(const std::map<Key, Real>& values) {
  auto best = values.begin();
  for (auto it = values.begin(); it != values.end(); ++it) {
    if (it->second < best->second) best = it;  // ties keep the lowest key
  }
  return *best;
}

void fill_labels(const Split& split, SplitPredictions& out) {
  out.split_name = split.name;
  out.sample_ids.reserve(split.samples.size());
  for (const auto& s : split.samples) {
    out.sample_ids.push_back(s.id);
    out.labels.push_back(s.label);
    out.groups.push_back(s.group);
  }
}

}  // namespace

SplitPredictions predict_split(const ClassifierHandle& handle, const Split& split) {
  SplitPredictions out;
  fill_labels(split, out);
  for (const auto& s : split.samples) out.predicted.push_back(argmax(predict_image(handle, s.image)));
  return out;
}

SplitPredictions predict_split(const DecisionLayer<Real>& layer, const LabeledFeatures& features,
                               const Split& split) {
  if (features.size() != split.samples.size()) {
    throw Error(ErrorCode::kShapeMismatch, "feature count does not match split '" + split.name + "'");
  }
  SplitPredictions out;
  fill_labels(split, out);
  for (const auto& f : features.features) out.predicted.push_back(argmax(logits(layer, f)));
  return out;
}

std::uint64_t split_fingerprint(const SplitPredictions& predictions) {
  std::uint64_t h = fnv1a(predictions.split_name);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    h = fnv1a(i < predictions.sample_ids.size() ? predictions.sample_ids[i] : std::string(), h);
    h = fnv1a(std::to_string(predictions.labels[i]), h ^ 0x1fULL);
  }
  return h;
}

MetricsReport evaluate(const SplitPredictions& predictions, const std::vector<std::string>& class_names,
                       const std::vector<int>* group_labels) {
  const std::size_t n = predictions.size();
  if (n == 0) throw Error(ErrorCode::kEmptySplit, "split '" + predictions.split_name + "' is empty");
  if (predictions.predicted.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "prediction count does not match label count");
  }
  if (group_labels != nullptr && group_labels->size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "group label count does not match split length");
  }

  MetricsReport report;
  report.split_name = predictions.split_name;
  report.split_fingerprint = split_fingerprint(predictions);
  report.n_samples = static_cast<int>(n);
  report.class_names = class_names;

  std::map<int, std::pair<int, int>> by_class;  // correct, total
  std::map<int, std::pair<int, int>> by_group;
  for (std::size_t i = 0; i < n; ++i) {
    const bool hit = predictions.predicted[i] == predictions.labels[i];
    report.n_correct += hit ? 1 : 0;
    auto& c = by_class[predictions.labels[i]];
    c.first += hit ? 1 : 0;
    ++c.second;
    const int group = group_labels != nullptr ? (*group_labels)[i]
                      : i < predictions.groups.size() ? predictions.groups[i]
                                                      : -1;
    if (group >= 0) {
      auto& g = by_group[group];
      g.first += hit ? 1 : 0;
      ++g.second;
    }
  }
  report.avg_acc = static_cast<Real>(report.n_correct) / static_cast<Real>(n);
  for (const auto& [id, counts] : by_class) {
    report.per_class_acc[id] = static_cast<Real>(counts.first) / static_cast<Real>(counts.second);
  }
  for (const auto& [id, counts] : by_group) {
    report.per_group_acc[id] = static_cast<Real>(counts.first) / static_cast<Real>(counts.second);
  }
  report.worst_class = minimum_entry(report.per_class_acc);
  if (!report.per_group_acc.empty()) report.worst_group = minimum_entry(report.per_group_acc);
  return report;
}

MetricsReport evaluate(const ClassifierHandle& handle, const Split& split,
                       const std::vector<int>* group_labels) {
  if (split.samples.empty()) throw Error(ErrorCode::kEmptySplit, "split '" + split.name + "' is empty");
  return evaluate(predict_split(handle, split), handle.class_names(), group_labels);
}

Real precision_at_k(const RankingReport& report, const std::vector<int>& target_neurons, int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  if (report.per_sample_top.empty()) return 0.0;
  int hits = 0;
  for (const auto& top : report.per_sample_top) {
    const std::size_t depth = std::min(top.size(), static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < depth; ++r) {
      if (std::find(target_neurons.begin(), target_neurons.end(), top[r]) != target_neurons.end()) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<Real>(hits) / static_cast<Real>(report.per_sample_top.size());
}

namespace {

DeltaRow delta_row(const EvaluationSnapshot& before, const EvaluationSnapshot& after) {
  if (before.metrics.split_name != after.metrics.split_name ||
      before.metrics.split_fingerprint != after.metrics.split_fingerprint ||
      before.metrics.n_samples != after.metrics.n_samples) {
    throw Error(ErrorCode::kSplitMismatch, "before and after were evaluated on different splits ('" +
                                               before.metrics.split_name + "' vs '" +
                                               after.metrics.split_name + "')");
  }
  if (before.k != after.k) throw Error(ErrorCode::kInvalidArgument, "before and after use different k");
  DeltaRow row;
  row.scenario = after.scenario.empty() ? before.scenario : after.scenario;
  row.acc_before = before.metrics.avg_acc;
  row.acc_after = after.metrics.avg_acc;
  row.delta_acc = row.acc_after - row.acc_before;
  row.worst_class_before = before.metrics.worst_class.second;
  row.worst_class_after = after.metrics.worst_class.second;
  row.delta_worst_class = row.worst_class_after - row.worst_class_before;
  if (before.ranking && after.ranking) {
    row.prec_before = precision_at_k(*before.ranking, before.target_neurons, before.k);
    row.prec_after = precision_at_k(*after.ranking, after.target_neurons, after.k);
    row.delta_prec_at_k = *row.prec_after - *row.prec_before;
  }
  return row;
}

}  // namespace

DeltaReport compare_edits(const EvaluationSnapshot& before, const EvaluationSnapshot& after) {
  const std::pair<EvaluationSnapshot, EvaluationSnapshot> one[] = {{before, after}};
  return compare_edits(std::span<const std::pair<EvaluationSnapshot, EvaluationSnapshot>>(one));
}

DeltaReport compare_edits(std::span<const std::pair<EvaluationSnapshot, EvaluationSnapshot>> scenarios) {
  if (scenarios.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to compare");
  DeltaReport report;
  report.k = scenarios.front().first.k;
  Real prec_sum = 0.0;
  int prec_rows = 0;
  for (const auto& [before, after] : scenarios) {
    report.rows.push_back(delta_row(before, after));
    report.delta_acc += report.rows.back().delta_acc;
    if (report.rows.back().delta_prec_at_k) {
      prec_sum += *report.rows.back().delta_prec_at_k;
      ++prec_rows;
    }
  }
  report.delta_acc /= static_cast<Real>(report.rows.size());
  if (prec_rows > 0) report.delta_prec_at_k = prec_sum / static_cast<Real>(prec_rows);
  return report;
}

std::string format_table(const MetricsReport& report) {
  std::ostringstream out;
  out << "split " << report.split_name << "  n=" << report.n_samples << "  avg acc "
      << fixed(100.0 * report.avg_acc) << "%\n";
  out << pad("class", 16) << "acc (%)\n";
  for (const auto& [id, acc] : report.per_class_acc) {
    const std::string name = id >= 0 && static_cast<std::size_t>(id) < report.class_names.size()
                                 ? report.class_names[static_cast<std::size_t>(id)]
                                 : std::to_string(id);
    out << pad(name, 16) << fixed(100.0 * acc) << "\n";
  }
  out << pad("worst class", 16) << fixed(100.0 * report.worst_class.second) << "  (id "
      << report.worst_class.first << ")\n";
  if (report.worst_group) {
    out << pad("worst group", 16) << fixed(100.0 * report.worst_group->second) << "  (id "
        << report.worst_group->first << ")\n";
  }
  return out.str();
}

std::string format_table(const DeltaReport& report) {
  std::ostringstream out;
  const std::string prec = "dPrec@" + std::to_string(report.k);
  out << pad("scenario", 20) << pad("acc before", 12) << pad("acc after", 12) << pad("dAcc", 10)
      << pad("dWorst", 10) << prec << "\n";
  for (const auto& row : report.rows) {
    out << pad(row.scenario.empty() ? "-" : row.scenario, 20) << pad(fixed(100.0 * row.acc_before), 12)
        << pad(fixed(100.0 * row.acc_after), 12) << pad(signed_fixed(100.0 * row.delta_acc), 10)
        << pad(signed_fixed(100.0 * row.delta_worst_class), 10)
        << (row.delta_prec_at_k ? signed_fixed(100.0 * *row.delta_prec_at_k, 1) : std::string("n/a"))
        << "\n";
  }
  if (report.rows.size() > 1) {
    out << pad("mean", 20) << pad("", 12) << pad("", 12) << pad(signed_fixed(100.0 * report.delta_acc), 10)
        << pad("", 10)
        << (report.delta_prec_at_k ? signed_fixed(100.0 * *report.delta_prec_at_k, 1) : std::string("n/a"))
        << "\n";
  }
  return out.str();
}

}  // namespace neuronlens

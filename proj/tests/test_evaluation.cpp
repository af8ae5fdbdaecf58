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

#include <vector>

#include "neuronlens/errors.hpp"
#include "neuronlens/evaluation.hpp"
#include "neuronlens/fixtures.hpp"
#include "neuronlens/scenarios.hpp"
#include "neuronlens/serialization.hpp"

namespace neuronlens {
namespace {

SplitPredictions hand_labelled() {
  // Class 0: 3 of 4 right. Class 1: 2 of 3. Class 2: 1 of 3.
  SplitPredictions p;
  p.split_name = "fixture";
  p.labels = {0, 0, 0, 0, 1, 1, 1, 2, 2, 2};
  p.predicted = {0, 0, 0, 1, 1, 1, 2, 2, 0, 0};
  p.groups = {0, 0, 1, 1, 2, 2, 3, 4, 4, 5};
  for (std::size_t i = 0; i < p.labels.size(); ++i) p.sample_ids.push_back("s" + std::to_string(i));
  return p;
}

RankingReport ranking_with(std::vector<std::vector<int>> tops) {
  RankingReport r;
  r.k = 5;
  r.n_samples_used = static_cast<int>(tops.size());
  r.n_samples_total = r.n_samples_used;
  r.rank_rate.assign(8, 0.0);
  r.mean_signed_omega.assign(8, 0.0);
  r.category.assign(8, NeuronCategory::kExcessive);
  for (std::size_t i = 0; i < tops.size(); ++i) r.sample_ids.push_back("m" + std::to_string(i));
  r.per_sample_top = std::move(tops);
  return r;
}

TEST(Evaluation, ConstantPredictorOnBalancedBinarySplit) {
  SplitPredictions p;
  p.split_name = "binary";
  for (int i = 0; i < 50; ++i) {
    p.labels.push_back(i % 2);
    p.predicted.push_back(0);
    p.sample_ids.push_back(std::to_string(i));
  }
  const MetricsReport m = evaluate(p);
  EXPECT_EQ(m.avg_acc, 0.5);
  EXPECT_EQ(m.worst_class.first, 1);
  EXPECT_EQ(m.worst_class.second, 0.0);
  EXPECT_FALSE(m.worst_group.has_value());
}

TEST(Evaluation, HandLabelledFixture) {
  const MetricsReport m = evaluate(hand_labelled());
  EXPECT_EQ(m.n_samples, 10);
  EXPECT_EQ(m.n_correct, 6);
  EXPECT_DOUBLE_EQ(m.avg_acc, 0.6);
  EXPECT_DOUBLE_EQ(m.per_class_acc.at(0), 0.75);
  EXPECT_DOUBLE_EQ(m.per_class_acc.at(1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.per_class_acc.at(2), 1.0 / 3.0);
  EXPECT_EQ(m.worst_class.first, 2);
  ASSERT_TRUE(m.worst_group.has_value());
  EXPECT_EQ(m.per_group_acc.at(0), 1.0);
  EXPECT_EQ(m.per_group_acc.at(1), 0.5);
  EXPECT_EQ(m.per_group_acc.at(3), 0.0);
  // Groups 3 and 5 are both at 0; the lower id wins.
  EXPECT_EQ(m.worst_group->first, 3);
  EXPECT_EQ(m.worst_group->second, 0.0);
}

TEST(Evaluation, GroupOverrideAndValidation) {
  const std::vector<int> override_groups(10, 7);
  const MetricsReport m = evaluate(hand_labelled(), {}, &override_groups);
  ASSERT_EQ(m.per_group_acc.size(), 1u);
  EXPECT_DOUBLE_EQ(m.per_group_acc.at(7), 0.6);

  const std::vector<int> short_groups(3, 0);
  EXPECT_THROW(evaluate(hand_labelled(), {}, &short_groups), Error);
  SplitPredictions empty;
  empty.split_name = "none";
  try {
    evaluate(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySplit);
  }
}

TEST(Evaluation, PrecisionAtK) {
  EXPECT_EQ(precision_at_k(ranking_with({{4, 1, 2}, {0, 4, 3}, {2, 3, 4}}), {4}), 1.0);
  EXPECT_EQ(precision_at_k(ranking_with({{1, 2, 3, 4}, {0, 1, 2}}), {4}), 0.0);
  EXPECT_EQ(precision_at_k(ranking_with({{4}, {1, 5}, {5, 6, 7}, {0, 1, 2}}), {4, 5}), 0.75);
  EXPECT_EQ(precision_at_k(ranking_with({{1, 2, 3, 4}}), {4}, 4), 1.0);
  EXPECT_THROW(precision_at_k(ranking_with({{1}}), {1}, 0), Error);
}

TEST(Evaluation, CompareIdenticalSnapshotsIsZero) {
  EvaluationSnapshot s{"planted", evaluate(hand_labelled()), ranking_with({{4, 1}, {2, 3}}), {4}, 3};
  const DeltaReport d = compare_edits(s, s);
  EXPECT_EQ(d.delta_acc, 0.0);
  ASSERT_TRUE(d.delta_prec_at_k.has_value());
  EXPECT_EQ(*d.delta_prec_at_k, 0.0);
  ASSERT_EQ(d.rows.size(), 1u);
  EXPECT_EQ(d.rows[0].delta_worst_class, 0.0);
  EXPECT_EQ(*d.rows[0].prec_before, 0.5);
}

TEST(Evaluation, CompareReportsSignedDifferences) {
  SplitPredictions improved = hand_labelled();
  improved.predicted[3] = 0;
  improved.predicted[9] = 2;
  const EvaluationSnapshot before{"planted", evaluate(hand_labelled()), ranking_with({{4}, {4}}), {4}, 3};
  const EvaluationSnapshot after{"planted", evaluate(improved), ranking_with({{1}, {4}}), {4}, 3};
  const DeltaReport d = compare_edits(before, after);
  EXPECT_NEAR(d.delta_acc, 0.2, 1e-15);
  EXPECT_NEAR(d.rows[0].delta_worst_class, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(*d.delta_prec_at_k, -0.5);
}

TEST(Evaluation, MismatchedSplitsAreRejected) {
  SplitPredictions other = hand_labelled();
  other.sample_ids[0] = "different";
  const EvaluationSnapshot a{"x", evaluate(hand_labelled()), std::nullopt, {}, 3};
  const EvaluationSnapshot b{"x", evaluate(other), std::nullopt, {}, 3};
  try {
    compare_edits(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSplitMismatch);
  }
  EXPECT_FALSE(compare_edits(a, a).delta_prec_at_k.has_value());
}

TEST(Evaluation, MultiScenarioMeans) {
  SplitPredictions improved = hand_labelled();
  improved.predicted[3] = 0;
  const EvaluationSnapshot a{"one", evaluate(hand_labelled()), std::nullopt, {}, 3};
  const EvaluationSnapshot b{"one", evaluate(improved), std::nullopt, {}, 3};
  const std::vector<std::pair<EvaluationSnapshot, EvaluationSnapshot>> pairs = {{a, b}, {a, a}};
  const DeltaReport d = compare_edits(pairs);
  ASSERT_EQ(d.rows.size(), 2u);
  EXPECT_NEAR(d.delta_acc, 0.05, 1e-15);
}

TEST(Evaluation, CachedPredictionsReplayExactly) {
  ScenarioSpec spec;
  spec.train_per_class = 4;
  spec.val_per_class = 4;
  spec.test_per_class = 6;
  const Dataset data = synth_planted_dataset(spec);
  const ClassifierHandle handle = fixtures::make_toy_classifier(2, 5, 1.0);
  const Split& test = data.split("test");

  const MetricsReport live = evaluate(handle, test);
  const SplitPredictions cached = predict_split(handle, test);
  const Json stored = cached;
  const SplitPredictions replayed = Json::parse(stored.dump()).get<SplitPredictions>();
  const MetricsReport from_cache = evaluate(replayed, handle.class_names());
  EXPECT_EQ(Json(live).dump(), Json(from_cache).dump());

  const SplitPredictions via_features =
      predict_split(decision_weights(handle), features_for_split(handle, test), test);
  EXPECT_EQ(via_features.predicted, cached.predicted);
}

TEST(Evaluation, JsonRoundTrips) {
  const MetricsReport m = evaluate(hand_labelled(), {"a", "b", "c"});
  EXPECT_EQ(Json(Json(m).get<MetricsReport>()).dump(), Json(m).dump());

  const EvaluationSnapshot s{"planted", m, ranking_with({{4, 1}, {2, 3}}), {4}, 3};
  const DeltaReport d = compare_edits(s, s);
  EXPECT_EQ(Json(Json(d).get<DeltaReport>()).dump(), Json(d).dump());
}

TEST(Evaluation, TablesNameEveryClass) {
  const std::string table = format_table(evaluate(hand_labelled(), {"disk", "ring", "bar"}));
  for (const char* name : {"disk", "ring", "bar", "worst class", "worst group"}) {
    EXPECT_NE(table.find(name), std::string::npos) << name;
  }
}

}  // namespace
}  // namespace neuronlens

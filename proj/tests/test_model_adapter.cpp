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

#include <random>
#include <vector>

#include "neuronlens/errors.hpp"
#include "neuronlens/fixtures.hpp"
#include "neuronlens/model.hpp"
#include "test_support.hpp"

namespace neuronlens {
namespace {

using testing::random_image;
using testing::random_layer;
using testing::random_vector;

// 1x1 conv so every output cell sees exactly one input pixel.
ClassifierHandle pointwise_classifier() {
  Conv2d<Real> conv = Conv2d<Real>::make(3, 2, 1, 1, 0);
  conv.weight << 0.1, 0.2, 0.3,  //
      -0.1, 0.0, 0.0;
  conv.bias << 1.0, 0.1;
  DecisionLayer<Real> layer = DecisionLayer<Real>::zeros(3, 2);
  layer.coefficients << 1.0, -1.0,  //
      0.5, 2.0,                     //
      -0.25, 0.0;
  layer.bias << 0.0, 0.1, -0.2;
  return split_classifier(Backbone<Real>(3, {conv, Relu{}}), layer, InputSpec{}, {"a", "b", "c"});
}

TEST(ModelAdapter, ZeroImageGivesAnalyticBiasResponse) {
  const ClassifierHandle handle = pointwise_classifier();
  // Normalized zero image is -2 in every channel; the pooled mean adds rounding.
  const FeatureVector f = extract_features(handle, Image<Real>::zeros(3, 64, 64));
  ASSERT_EQ(f.size(), 2);
  EXPECT_NEAR(f(0), 0.0, 1e-12);  // relu(1 - 2 * 0.6)
  EXPECT_NEAR(f(1), 0.3, 1e-12);  // relu(0.1 + 2 * 0.1)
}

TEST(ModelAdapter, PredictEqualsCompositionOnProbeImages) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(3);
  EXPECT_EQ(handle.feature_dim(), 8);
  std::mt19937_64 rng(11);
  for (int i = 0; i < 5; ++i) {
    const Image<Real> image = random_image(64, rng);
    const Vector<Real> end_to_end = predict_image(handle, image);
    const FeatureVector f = extract_features(handle, image);
    const Vector<Real> composed = predict(handle, f);
    const Vector<Real> manual = softmax((handle.layer().coefficients * f + handle.layer().bias).eval());
    EXPECT_LE((end_to_end - composed).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LE((end_to_end - manual).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(end_to_end.sum(), 1.0, 1e-6);
    EXPECT_GE(end_to_end.minCoeff(), 0.0);
  }
}

TEST(ModelAdapter, LogitsAreExactlyTheAffineMap) {
  std::mt19937_64 rng(2);
  const DecisionLayer<Real> layer = random_layer(4, 6, rng);
  const Vector<Real> f = random_vector(6, rng);
  const Vector<Real> z = logits(layer, f);
  for (int i = 0; i < 4; ++i) {
    Real sum = layer.bias(i);
    for (int k = 0; k < 6; ++k) sum += layer.coefficients(i, k) * f(k);
    EXPECT_NEAR(z(i), sum, 1e-14);
  }
}

TEST(ModelAdapter, BatchShapeAndDeterminism) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(5);
  std::mt19937_64 rng(7);
  const std::vector<Image<Real>> batch{random_image(64, rng), random_image(64, rng), random_image(64, rng)};
  const auto first = extract_features(handle, batch);
  const auto second = extract_features(handle, batch);
  ASSERT_EQ(first.size(), 3u);
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(first[i].size(), handle.feature_dim());
    EXPECT_TRUE(first[i].allFinite());
    EXPECT_EQ((first[i] - second[i]).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(ModelAdapter, WrongGeometryIsShapeMismatch) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(1);
  try {
    extract_features(handle, Image<Real>::zeros(3, 32, 64));
    FAIL() << "expected ShapeMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  try {
    predict(handle, FeatureVector::Zero(handle.feature_dim() + 1));
    FAIL() << "expected ShapeMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(ModelAdapter, DecisionWeightsIsAnIsolatedCopy) {
  const ClassifierHandle handle = pointwise_classifier();
  DecisionLayer<Real> copy = decision_weights(handle);
  const DecisionLayer<Real> again = decision_weights(handle);
  EXPECT_EQ(copy.coefficients, again.coefficients);
  EXPECT_EQ(copy.bias, again.bias);
  EXPECT_EQ(copy.coefficients(1, 1), 2.0);
  copy.coefficients(1, 1) = -7.0;
  copy.bias(0) = 42.0;
  EXPECT_EQ(handle.layer().coefficients(1, 1), 2.0);
  EXPECT_EQ(handle.layer().bias(0), 0.0);

  const ClassifierHandle edited = handle.with_decision_layer(copy);
  EXPECT_EQ(edited.layer().coefficients(1, 1), -7.0);
  EXPECT_EQ(handle.layer().coefficients(1, 1), 2.0);
  EXPECT_EQ(&edited.backbone(), &handle.backbone());
}

TEST(ModelAdapter, SpatialMapPoolsToFeatureOnRandomImages) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(9);
  std::mt19937_64 rng(13);
  Real worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Image<Real> image = random_image(64, rng);
    const FeatureVector f = extract_features(handle, image);
    const int n = i % handle.feature_dim();
    const SpatialActivationMap map = neuron_spatial_map(handle, image, n);
    EXPECT_EQ(map.neuron_id, n);
    EXPECT_GE(map.grid.minCoeff(), 0.0);
    worst = std::max(worst, testing::relative_error(map.grid.mean(), f(n), 1e-12));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(ModelAdapter, ConstantImageGivesConstantGrid) {
  // No padding: the grid is exactly constant.
  const ClassifierHandle pointwise = pointwise_classifier();
  const SpatialActivationMap flat = neuron_spatial_map(pointwise, Image<Real>::constant(3, 64, 64, 0.8), 1);
  EXPECT_EQ(flat.grid.maxCoeff(), flat.grid.minCoeff());

  // Zero padding perturbs the border row/column; the interior is constant.
  const ClassifierHandle toy = fixtures::make_toy_classifier(4);
  for (int n = 0; n < toy.feature_dim(); ++n) {
    const SpatialActivationMap map = neuron_spatial_map(toy, Image<Real>::constant(3, 64, 64, 0.8), n);
    ASSERT_EQ(map.grid.rows(), 16);
    const Matrix<Real> interior = map.grid.block(1, 1, 15, 15);
    EXPECT_NEAR(interior.maxCoeff(), interior.minCoeff(), 1e-12 * (1.0 + interior.maxCoeff()));
  }
}

TEST(ModelAdapter, NeuronIdEqualToDIsOutOfRange) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(1);
  try {
    neuron_spatial_map(handle, Image<Real>::zeros(3, 64, 64), handle.feature_dim());
    FAIL() << "expected NeuronOutOfRange";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNeuronOutOfRange);
  }
}

TEST(ModelAdapter, ZeroFeaturesOnZeroBiasGiveUniform) {
  std::mt19937_64 rng(3);
  DecisionLayer<Real> layer = random_layer(7, 8, rng);
  layer.bias.setZero();
  const Vector<Real> p = class_probabilities(layer, Vector<Real>::Zero(8));
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(p(i), 1.0 / 7.0, 1e-15);
}

TEST(ModelAdapter, DominantLogitSaturates) {
  DecisionLayer<Real> layer = DecisionLayer<Real>::zeros(4, 2);
  layer.coefficients(2, 0) = 1.0;
  Vector<Real> f(2);
  f << 50.0, 0.0;
  const Vector<Real> p = class_probabilities(layer, f);
  EXPECT_GE(p(2), 1.0 - 1e-9);
  EXPECT_EQ(argmax(p), 2);
}

TEST(ModelAdapter, SoftmaxMatchesDirectRecomputation) {
  std::mt19937_64 rng(17);
  Real worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const DecisionLayer<Real> layer = random_layer(6, 9, rng, 2.0);
    const Vector<Real> f = random_vector(9, rng);
    const Vector<Real> p = class_probabilities(layer, f);
    std::vector<Real> e(6);
    Real total = 0.0;
    for (int i = 0; i < 6; ++i) {
      Real z = layer.bias(i);
      for (int k = 0; k < 9; ++k) z += layer.coefficients(i, k) * f(k);
      e[static_cast<std::size_t>(i)] = std::exp(z);
      total += e[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 6; ++i) worst = std::max(worst, std::abs(p(i) - e[static_cast<std::size_t>(i)] / total));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(ModelAdapter, RegistryWidths) {
  const ClassifierHandle r18 = split_classifier(ModelDescriptor{"residual-18-style", "", 5, 0});
  EXPECT_EQ(r18.feature_dim(), 512);
  EXPECT_EQ(decision_weights(r18).coefficients.rows(), 5);
  EXPECT_EQ(decision_weights(r18).coefficients.cols(), 512);
  const ClassifierHandle r50 = split_classifier(ModelDescriptor{"residual-50-style", "", 5, 0});
  EXPECT_EQ(r50.feature_dim(), 2048);
  const FeatureVector f = extract_features(r50, Image<Real>::constant(3, 64, 64, 0.3));
  EXPECT_EQ(f.size(), 2048);
  EXPECT_TRUE(f.allFinite());
}

TEST(ModelAdapter, UnknownArchitectureIsRejected) {
  try {
    split_classifier(ModelDescriptor{"vision-transformer", "", 5, 0});
    FAIL() << "expected UnsupportedArchitecture";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedArchitecture);
  }
}

TEST(ModelAdapter, ModelFileRoundTrip) {
  const testing::ScratchDir dir("model");
  const ClassifierHandle handle = fixtures::make_toy_classifier(21);
  save_model(handle, dir.path() / "model.json");
  const ClassifierHandle loaded = load_model(dir.path() / "model.json");
  EXPECT_EQ(loaded.architecture(), "toy-cnn");
  EXPECT_EQ(loaded.class_names(), handle.class_names());
  EXPECT_EQ(loaded.layer().coefficients, handle.layer().coefficients);
  EXPECT_EQ(parameter_checksum(loaded.backbone()), parameter_checksum(handle.backbone()));
  std::mt19937_64 rng(1);
  const Image<Real> image = random_image(64, rng);
  EXPECT_EQ(extract_features(loaded, image), extract_features(handle, image));
}

}  // namespace
}  // namespace neuronlens

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
#include <cmath>
#include <random>
#include <vector>

#include "neuronlens/augment.hpp"
#include "neuronlens/errors.hpp"
#include "neuronlens/fixtures.hpp"
#include "neuronlens/image_io.hpp"
#include "neuronlens/visualizer.hpp"
#include "test_support.hpp"

namespace neuronlens {
namespace {

using testing::random_image;
using testing::relative_error;

std::string filled(const std::string& pattern, const std::string& name) {
  const auto at = pattern.find("{}");
  return pattern.substr(0, at) + name + pattern.substr(at + 2);
}

Image<Real> centred_disk(int size, Real radius) {
  Image<Real> image = Image<Real>::zeros(3, size, size);
  const Real c = 0.5 * (size - 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if ((x - c) * (x - c) + (y - c) * (y - c) <= radius * radius) {
        for (int ch = 0; ch < 3; ++ch) image.at(ch, y, x) = 1.0;
      }
    }
  }
  return image;
}

Real measured_radius(const Image<Real>& image) {
  int area = 0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) area += image.at(0, y, x) > 0.5 ? 1 : 0;
  }
  return std::sqrt(area / std::numbers::pi);
}

TEST(Prompts, SingleTemplateIsThatNormalizedEmbedding) {
  const StubEncoderPair encoder(3);
  const Vector<Real> e = encoder.encode_text("a photo of a cat.");
  const Vector<Real> p = build_prompt_embedding(encoder, "cat", {"a photo of a {}."});
  EXPECT_LE((p - e / e.norm()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Prompts, DuplicateTemplateMatchesSingle) {
  const StubEncoderPair encoder(3);
  const Vector<Real> once = build_prompt_embedding(encoder, "dog", {"art of the {}."});
  const Vector<Real> twice = build_prompt_embedding(encoder, "dog", {"art of the {}.", "art of the {}."});
  EXPECT_LE((once - twice).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Prompts, SevenTemplatesMatchExternalMeanThenNormalize) {
  const StubEncoderPair encoder(5);
  const auto templates = default_prompt_templates();
  ASSERT_EQ(templates.size(), 7u);
  Vector<Real> mean = Vector<Real>::Zero(encoder.embedding_dim());
  for (const auto& t : templates) {
    const Vector<Real> e = encoder.encode_text(filled(t, "cat"));
    mean += e / e.norm();
  }
  mean /= 7.0;
  mean /= mean.norm();
  const Vector<Real> p = build_prompt_embedding(encoder, "cat", templates);
  EXPECT_LE((p - mean).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(p.norm(), 1.0, 1e-12);
}

TEST(Prompts, BadTemplatesAndUnknownEncoders) {
  const StubEncoderPair encoder;
  EXPECT_THROW(build_prompt_embedding(encoder, "cat", {"no placeholder"}), Error);
  EXPECT_THROW(build_prompt_embedding(encoder, "", {"a {}"}), Error);
  try {
    make_encoder_pair("web-scale");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEncoderUnavailable);
  }
}

TEST(Alignment, SelfIsOneAndOrthogonalIsZero) {
  const StubEncoderPair encoder(7);
  std::mt19937_64 rng(1);
  const Image<Real> image = random_image(64, rng);
  const Vector<Real> e = encoder.encode_image(image);
  EXPECT_NEAR(clip_alignment(encoder, image, e), 1.0, 1e-12);

  Vector<Real> other = testing::random_vector(static_cast<int>(e.size()), rng);
  other -= other.dot(e) / e.squaredNorm() * e;
  EXPECT_NEAR(clip_alignment(encoder, image, other), 0.0, 1e-12);

  const Vector<Real> text = encoder.encode_text("a ring");
  EXPECT_NEAR(clip_alignment(encoder, image, text), e.dot(text) / (e.norm() * text.norm()), 1e-6);
}

TEST(Augment, IdentityParametersLeaveImageUnchanged) {
  std::mt19937_64 rng(2);
  const Image<Real> image = random_image(32, rng);
  const AugmentParams identity;
  EXPECT_TRUE(identity.is_identity());
  EXPECT_EQ(apply_augment(image, identity).planes, image.planes);
  AugmentParams explicit_identity;
  explicit_identity.blur_sigma = 0.0;
  explicit_identity.angle_degrees = 0.0;
  EXPECT_EQ(apply_augment(image, explicit_identity).planes, image.planes);
}

TEST(Augment, SeededDrawsAreDeterministic) {
  std::mt19937_64 rng(3);
  const Image<Real> image = random_image(32, rng);
  std::mt19937_64 a(99), b(99);
  EXPECT_EQ(augment(image, a).planes, augment(image, b).planes);
  std::mt19937_64 ranges_rng(5);
  for (int i = 0; i < 200; ++i) {
    const AugmentParams p = sample_augment(ranges_rng);
    EXPECT_LE(std::abs(p.angle_degrees), 15.0);
    EXPECT_LE(std::abs(p.shift_x), 0.15);
    EXPECT_LE(std::abs(p.shift_y), 0.15);
    EXPECT_GE(p.scale, 0.7);
    EXPECT_LE(p.scale, 1.2);
  }
}

TEST(Augment, ScaleShrinksCentredDisk) {
  const Image<Real> disk = centred_disk(64, 20.0);
  const Real before = measured_radius(disk);
  AugmentParams p;
  p.scale = 0.7;
  const Real after = measured_radius(apply_augment(disk, p));
  EXPECT_NEAR(after, 0.7 * before, 1.0);
}

TEST(Augment, AdjointPassesDotProductTest) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Image<Real> x = random_image(24, rng);
    const Image<Real> y = random_image(24, rng);
    const AugmentParams p = sample_augment(rng);
    const Real lhs = (apply_augment(x, p).planes.array() * y.planes.array()).sum();
    const Real rhs = (x.planes.array() * apply_augment_adjoint(y, p).planes.array()).sum();
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
  }
}

TEST(Objective, PixelGradientMatchesFiniteDifferences) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(2);
  const StubEncoderPair encoder(1);
  const Vector<Real> text = build_prompt_embedding(encoder, "class1", default_prompt_templates());
  ImageObjective objective;
  objective.neuron_id = 3;
  objective.class_id = 1;
  objective.gamma = 0.7;
  objective.epsilon = 0.1;
  objective.text_embedding = &text;
  std::mt19937_64 rng(6);
  Image<Real> image = random_image(64, rng);
  const ObjectiveValue value = evaluate_objective(handle, objective, image, &encoder);
  std::uniform_int_distribution<Eigen::Index> pick(0, image.planes.size() - 1);
  Real worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Eigen::Index at = pick(rng);
    const Real numeric = testing::central_difference(
        [&] { return evaluate_objective(handle, objective, image, &encoder).terms.loss; }, image.planes.data()[at]);
    worst = std::max(worst, relative_error(value.gradient.planes.data()[at], numeric));
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(Objective, GammaZeroDropsTheClassTerm) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(2);
  const StubEncoderPair encoder(1);
  const Vector<Real> text = build_prompt_embedding(encoder, "class0", default_prompt_templates());
  std::mt19937_64 rng(8);
  const Image<Real> image = random_image(64, rng);
  ImageObjective objective{2, 0, 0.0, 0.1, &text};
  const ObjectiveValue v = evaluate_objective(handle, objective, image, &encoder);
  EXPECT_EQ(v.terms.loss, -(v.terms.alignment + 0.1) * v.terms.activation);
  EXPECT_NE(v.terms.class_logit, 0.0);
}

TEST(Illusion, GammaZeroTraceEqualsAlignmentWeightedActivationRun) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(4);
  IllusionSpec spec;
  spec.neuron_id = 5;
  spec.class_id = 2;
  spec.gamma = 0.0;
  spec.steps = 25;
  spec.seed = 17;
  const StubEncoderPair encoder;
  const IllusionResult illusion = generate_illusion(handle, spec, encoder);

  const Vector<Real> text = build_prompt_embedding(encoder, handle.class_names()[2], spec.prompt_templates);
  const ImageObjective weighted{5, -1, 0.0, spec.epsilon, &text};
  const IllusionResult plain = optimize_image(handle, weighted, spec, &encoder);
  ASSERT_EQ(illusion.trace.size(), plain.trace.size());
  for (std::size_t s = 0; s < plain.trace.size(); ++s) EXPECT_EQ(illusion.trace[s].loss, plain.trace[s].loss) << s;
  EXPECT_EQ(illusion.image.planes, plain.image.planes);
}

TEST(Illusion, ZeroStepsReturnsTheNoiseImage) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(4);
  const IllusionResult r = generate_fv(handle, 1, 0, 9e-3, 23);
  const Image<Real> noise = noise_image(64, 64, 0.4, 23);
  EXPECT_EQ(r.image.planes, noise.planes);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_NEAR(r.activation, extract_features(handle, noise)(1), 1e-12);
}

TEST(Illusion, ActivationOfResultMatchesFeatures) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(6);
  IllusionSpec spec;
  spec.neuron_id = 0;
  spec.class_id = 1;
  spec.steps = 30;
  const IllusionResult r = generate_illusion(handle, spec);
  EXPECT_LE(relative_error(r.activation, extract_features(handle, r.image)(0), 1e-12), 1e-4);
  EXPECT_EQ(r.class_id, 1);
  EXPECT_EQ(r.trace.size(), 30u);
}

TEST(Illusion, FeatureVisualizationBeatsNoise) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(1);
  const Vector<Real> q99 = noise_activation_quantiles(handle, 200, 0.99, 7);
  const IllusionResult r = generate_fv(handle, 0, 100);
  EXPECT_GT(r.activation, q99(0));
  EXPECT_EQ(generate_fv(handle, 0, 1).spec.learning_rate, 9e-3);
}

TEST(Illusion, FixedSeedIsBitIdentical) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(8);
  IllusionSpec spec;
  spec.neuron_id = 4;
  spec.steps = 20;
  spec.seed = 3;
  const IllusionResult a = generate_illusion(handle, spec);
  const IllusionResult b = generate_illusion(handle, spec);
  EXPECT_EQ(a.image.planes, b.image.planes);
  EXPECT_EQ(a.masked_image.planes, b.masked_image.planes);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t s = 0; s < a.trace.size(); ++s) EXPECT_EQ(a.trace[s].loss, b.trace[s].loss);
  EXPECT_EQ(encode_png(a.image), encode_png(b.image));
}

TEST(Illusion, SpecValidation) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(8);
  IllusionSpec spec;
  spec.gamma = 1.5;
  EXPECT_THROW(generate_illusion(handle, spec), Error);
  spec.gamma = 0.5;
  spec.steps = 0;
  EXPECT_THROW(generate_illusion(handle, spec), Error);
  spec.steps = 5;
  spec.neuron_id = handle.feature_dim();
  try {
    generate_illusion(handle, spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNeuronOutOfRange);
  }
}

TEST(TopClasses, OneHotColumnPutsThatClassFirst) {
  DecisionLayer<Real> layer = DecisionLayer<Real>::zeros(10, 3);
  layer.coefficients(7, 1) = 1.0;
  const std::vector<int> top = top_classes_for_neuron(layer, 1, 3);
  EXPECT_EQ(top, (std::vector<int>{7, 0, 1}));
  EXPECT_THROW(top_classes_for_neuron(layer, 3, 1), Error);
  EXPECT_THROW(top_classes_for_neuron(layer, 0, 11), Error);
}

TEST(TopClasses, MatchesIndependentSort) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    DecisionLayer<Real> layer = testing::random_layer(12, 4, rng);
    if (trial % 5 == 0) layer.coefficients(3, 2) = layer.coefficients(8, 2);  // force a tie
    std::vector<std::pair<Real, int>> keyed;
    for (int c = 0; c < 12; ++c) keyed.push_back({-layer.coefficients(c, 2), c});
    std::sort(keyed.begin(), keyed.end());
    std::vector<int> expected;
    for (int i = 0; i < 5; ++i) expected.push_back(keyed[static_cast<std::size_t>(i)].second);
    EXPECT_EQ(top_classes_for_neuron(layer, 2, 5), expected);
  }
}

SpatialActivationMap grid_map(Matrix<Real> grid) {
  SpatialActivationMap m;
  m.grid = std::move(grid);
  return m;
}

TEST(Mask, UniformMapMasksNothing) {
  std::mt19937_64 rng(10);
  const Image<Real> image = random_image(64, rng);
  const MaskResult r = apply_mask(image, grid_map(Matrix<Real>::Constant(16, 16, 2.5)));
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.image.planes, image.planes);
}

TEST(Mask, ZeroThresholdLeavesImageUnchanged) {
  std::mt19937_64 rng(11);
  const Image<Real> image = random_image(64, rng);
  Matrix<Real> grid = Matrix<Real>::Zero(16, 16);
  grid(3, 4) = 1.0;
  EXPECT_EQ(apply_mask(image, grid_map(grid), 0.0).image.planes, image.planes);
}

TEST(Mask, QuadrantMapDarkensTheOtherThreeQuadrants) {
  const Image<Real> image = Image<Real>::constant(3, 64, 64, 0.8);
  Matrix<Real> grid = Matrix<Real>::Zero(4, 4);
  grid.block(0, 0, 2, 2).setConstant(1.0);
  const MaskResult r = apply_mask(image, grid_map(grid));

  // Independent bilinear evaluation with pixel-centre alignment.
  auto axis = [](int p) { return std::clamp((p + 0.5) / 16.0 - 0.5, 0.0, 3.0); };
  auto value = [&](int y, int x) {
    const Real sy = axis(y), sx = axis(x);
    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, 3), x1 = std::min(x0 + 1, 3);
    const Real fy = sy - y0, fx = sx - x0;
    return (1 - fy) * ((1 - fx) * grid(y0, x0) + fx * grid(y0, x1)) + fy * ((1 - fx) * grid(y1, x0) + fx * grid(y1, x1));
  };
  int darkened = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool dark = value(y, x) < 0.3;
      EXPECT_EQ(r.image.at(0, y, x), dark ? 0.8 * 0.1 : 0.8) << y << "," << x;
      darkened += dark ? 1 : 0;
      if (x >= 35 || y >= 35) {
        EXPECT_TRUE(dark);
      } else if (x < 28 && y < 28) {
        EXPECT_FALSE(dark);
      }
    }
  }
  EXPECT_GE(darkened, 64 * 64 - 35 * 35);
  EXPECT_LE(darkened, 64 * 64 - 28 * 28);
}

TEST(Mask, LocalityHoldsExactlyOnRandomMaps) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Image<Real> image = random_image(64, rng);
    Matrix<Real> grid(16, 16);
    for (Eigen::Index i = 0; i < grid.size(); ++i) grid.data()[i] = unit(rng) * unit(rng);
    const MaskResult r = apply_mask(image, grid_map(grid));
    const Real threshold = 0.3 * grid.maxCoeff();
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        for (int c = 0; c < 3; ++c) {
          if (r.upsampled(y, x) >= threshold) {
            ASSERT_EQ(r.image.at(c, y, x), image.at(c, y, x));
          } else {
            ASSERT_EQ(r.image.at(c, y, x), image.at(c, y, x) * 0.1);
          }
        }
      }
    }
  }
}

TEST(Mask, AllZeroMapIsDegenerate) {
  const Image<Real> image = Image<Real>::constant(3, 64, 64, 0.5);
  const MaskResult r = apply_mask(image, grid_map(Matrix<Real>::Zero(16, 16)));
  EXPECT_TRUE(r.degenerate);
  EXPECT_NEAR(r.image.planes.maxCoeff(), 0.05, 1e-15);

  IllusionResult illusion;
  illusion.image = image;
  illusion.masked_image = r.image;
  illusion.mask_degenerate = true;
  try {
    core_relevance(illusion, FeatureVector::Ones(8), fixtures::make_toy_classifier(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateMap);
  }
}

TEST(CoreRelevance, IdenticalImagesScoreZeroAndSelfCosineIsOne) {
  const ClassifierHandle handle = fixtures::make_toy_classifier(14);
  std::mt19937_64 rng(13);
  IllusionResult illusion;
  illusion.image = random_image(64, rng);
  illusion.spatial_map = grid_map(Matrix<Real>::Constant(16, 16, 1.0));
  illusion.masked_image = apply_mask(illusion.image, illusion.spatial_map).image;
  const FeatureVector self = extract_features(handle, illusion.image);
  const CoreRelevance r = core_relevance(illusion, self, handle);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_NEAR(r.without_mask_sim, 1.0, 1e-12);
  EXPECT_EQ(r.score, r.with_mask_sim - r.without_mask_sim);
}

}  // namespace
}  // namespace neuronlens

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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "neuronlens/augment.hpp"
#include "neuronlens/model.hpp"

namespace neuronlens {

// Paired image/text encoders projecting into one embedding space.
class ImageTextEncoder {
 public:
  virtual ~ImageTextEncoder() = default;
  virtual std::string name() const = 0;
  virtual int embedding_dim() const = 0;
  virtual Vector<Real> encode_text(const std::string& text) const = 0;
  virtual Vector<Real> encode_image(const Image<Real>& image) const = 0;
  // Vector-Jacobian product: dL/d(image) given dL/d(embedding).
  virtual Image<Real> image_vjp(const Image<Real>& image, const Vector<Real>& dembedding) const = 0;
};

// Small deterministic pair. Images are average-pooled to an 8x8 grid and
// mapped through tanh(P x); text is a sum of per-token Gaussian vectors
// seeded by a hash of the lowercased token. Both embeddings carry one extra
// constant coordinate, which keeps image/text cosines mostly positive as they
// are for production encoders.
class StubEncoderPair final : public ImageTextEncoder {
 public:
  explicit StubEncoderPair(std::uint64_t seed = 0, int embedding_dim = 32, int grid = 8);

  std::string name() const override { return "stub"; }
  int embedding_dim() const override { return dim_ + 1; }
  Vector<Real> encode_text(const std::string& text) const override;
  Vector<Real> encode_image(const Image<Real>& image) const override;
  Image<Real> image_vjp(const Image<Real>& image, const Vector<Real>& dembedding) const override;

 private:
  Vector<Real> pooled(const Image<Real>& image) const;
  Real shared_offset() const;

  std::uint64_t seed_;
  int dim_;
  int grid_;
  Matrix<Real> projection_;  // dim x (3 * grid * grid)
};

std::vector<std::string> known_encoder_pairs();

// "stub" is always available. Production encoders are not bundled; asking for
// one raises EncoderUnavailable.
std::shared_ptr<const ImageTextEncoder> make_encoder_pair(const std::string& name,
                                                          std::uint64_t seed = 0);

std::vector<std::string> default_prompt_templates();

// L2-normalized mean of the normalized embeddings of each filled template.
Vector<Real> build_prompt_embedding(const ImageTextEncoder& encoder, const std::string& class_name,
                                    const std::vector<std::string>& templates);

// Cosine similarity between the image embedding and `text_embedding`.
Real clip_alignment(const ImageTextEncoder& encoder, const Image<Real>& image,
                    const Vector<Real>& text_embedding);

struct IllusionSpec {
  int neuron_id = 0;
  std::optional<int> class_id;  // unset: auto mode over `auto_classes` classes
  int auto_classes = 25;         // capped at C
  Real gamma = 0.7;
  Real epsilon = 0.1;
  int steps = 400;
  Real learning_rate = 9e-3;
  Real weight_decay = 1e-4;
  Real init_stddev = 0.4;  // image = sigmoid(z), z ~ N(0, init_stddev^2)
  std::uint64_t seed = 0;
  std::string encoder_pair = "stub";
  std::vector<std::string> prompt_templates = default_prompt_templates();
  AugmentRanges augment;
  Real mask_threshold = 0.3;
  Real mask_brightness = 0.1;
};

void validate(const IllusionSpec& spec, int feature_dim, int num_classes);

struct IllusionStep {
  Real loss = 0.0;
  Real activation = 0.0;
  Real class_logit = 0.0;
  Real alignment = 0.0;
};

struct IllusionResult {
  Image<Real> image;
  Image<Real> masked_image;
  Real activation = 0.0;
  Real class_logit = 0.0;
  Real clip_alignment = 0.0;
  std::vector<IllusionStep> trace;
  SpatialActivationMap spatial_map;
  bool mask_degenerate = false;
  int class_id = -1;  // -1 for unconditioned runs
  IllusionSpec spec;
};

// Terms of the image objective. The loss is
//   -(alignment + epsilon) * (alpha_n + gamma * l_c)
// Without a text embedding the first factor is 1; with class_id < 0 the class
// term is dropped.
struct ImageObjective {
  int neuron_id = 0;
  int class_id = -1;
  Real gamma = 0.0;
  Real epsilon = 0.0;
  const Vector<Real>* text_embedding = nullptr;
};

struct ObjectiveValue {
  IllusionStep terms;
  Image<Real> gradient;  // dL/d(image)
};

ObjectiveValue evaluate_objective(const ClassifierHandle& handle, const ImageObjective& objective,
                                  const Image<Real>& image, const ImageTextEncoder* encoder);

// Optimizes sigmoid-parameterized pixels from seeded noise with AdamW and a
// cosine-annealed rate, applying a fresh augmentation every step.
IllusionResult optimize_image(const ClassifierHandle& handle, const ImageObjective& objective,
                              const IllusionSpec& settings, const ImageTextEncoder* encoder);

// Plain activation maximization: loss = -alpha_n.
IllusionResult generate_fv(const ClassifierHandle& handle, int neuron_id, int steps,
                           Real learning_rate = 9e-3, std::uint64_t seed = 0);

IllusionResult generate_illusion(const ClassifierHandle& handle, const IllusionSpec& spec);
IllusionResult generate_illusion(const ClassifierHandle& handle, const IllusionSpec& spec,
                                 const ImageTextEncoder& encoder);

// Classes with the largest coefficient on the neuron, descending; ties go to
// the lower class id.
std::vector<int> top_classes_for_neuron(const DecisionLayer<Real>& layer, int neuron_id, int k);

// The noise images the optimizer starts from, used as the activation baseline.
Image<Real> noise_image(int height, int width, Real stddev, std::uint64_t seed);

// Per-neuron `quantile` of activations over `count` noise images.
Vector<Real> noise_activation_quantiles(const ClassifierHandle& handle, int count, Real quantile,
                                        std::uint64_t seed, Real stddev = 0.4);

// Bilinear resize of a map to height x width (pixel-centre alignment).
Matrix<Real> upsample_bilinear(const Matrix<Real>& map, int height, int width);

struct MaskResult {
  Image<Real> image;
  Matrix<Real> upsampled;
  bool degenerate = false;
};

// Darkens pixels whose upsampled response is below threshold_fraction * max.
MaskResult apply_mask(const Image<Real>& image, const SpatialActivationMap& map,
                      Real threshold_fraction = 0.3, Real brightness = 0.1);

struct CoreRelevance {
  int neuron_id = 0;
  int class_id = 0;
  Real score = 0.0;
  Real with_mask_sim = 0.0;
  Real without_mask_sim = 0.0;
};

Real cosine_similarity(const Vector<Real>& a, const Vector<Real>& b);

CoreRelevance core_relevance(const IllusionResult& illusion,
                             const FeatureVector& class_representative,
                             const ClassifierHandle& handle);

}  // namespace neuronlens

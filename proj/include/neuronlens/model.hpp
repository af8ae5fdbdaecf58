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

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neuronlens/backbone.hpp"
#include "neuronlens/decision_layer.hpp"
#include "neuronlens/tensor.hpp"

namespace neuronlens {

using Real = double;
using FeatureVector = Vector<Real>;

struct InputSpec {
  int height = 64;
  int width = 64;
  int channels = 3;
  std::array<Real, 3> mean{0.5, 0.5, 0.5};
  std::array<Real, 3> stddev{0.25, 0.25, 0.25};
};

// Pre-pooling response of one penultimate channel.
struct SpatialActivationMap {
  int neuron_id = 0;
  Matrix<Real> grid;  // H' x W', non-negative
};

// A trained classifier split into feature extractor and dense decision layer.
// The backbone is shared and immutable; the decision layer is held by value so
// handles with edited layers never alias the original.
class ClassifierHandle {
 public:
  ClassifierHandle(std::shared_ptr<const Backbone<Real>> backbone, DecisionLayer<Real> layer,
                   InputSpec input, std::vector<std::string> class_names,
                   std::string architecture = "custom");

  int feature_dim() const { return backbone_->output_channels(); }
  int num_classes() const { return layer_.num_classes(); }
  const InputSpec& input_spec() const { return input_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::string& architecture() const { return architecture_; }
  const Backbone<Real>& backbone() const { return *backbone_; }
  std::shared_ptr<const Backbone<Real>> shared_backbone() const { return backbone_; }
  const DecisionLayer<Real>& layer() const { return layer_; }

  // Same extractor, different decision layer.
  ClassifierHandle with_decision_layer(DecisionLayer<Real> layer) const;

 private:
  std::shared_ptr<const Backbone<Real>> backbone_;
  DecisionLayer<Real> layer_;
  InputSpec input_;
  std::vector<std::string> class_names_;
  std::string architecture_;
};

// Where weights come from: a registry name with seeded initialization, or a
// model file on disk (architecture read from the file).
struct ModelDescriptor {
  std::string name;          // registry name, ignored when `weights_path` is set
  std::string weights_path;  // model JSON file
  int num_classes = 5;
  std::uint64_t seed = 0;
};

std::vector<std::string> registered_architectures();

// Builds an untrained backbone for a registry name.
Backbone<Real> make_registered_backbone(const std::string& name, std::uint64_t seed);

ClassifierHandle split_classifier(const ModelDescriptor& descriptor);

// Escape hatch for callers that already hold the two halves.
ClassifierHandle split_classifier(Backbone<Real> extractor, DecisionLayer<Real> layer,
                                  InputSpec input, std::vector<std::string> class_names);

FeatureVector extract_features(const ClassifierHandle& handle, const Image<Real>& image);
std::vector<FeatureVector> extract_features(const ClassifierHandle& handle,
                                            std::span<const Image<Real>> images);

DecisionLayer<Real> decision_weights(const ClassifierHandle& handle);

SpatialActivationMap neuron_spatial_map(const ClassifierHandle& handle, const Image<Real>& image,
                                        int neuron_id);

Vector<Real> predict(const ClassifierHandle& handle, const FeatureVector& features);

// End-to-end class probabilities for an image.
Vector<Real> predict_image(const ClassifierHandle& handle, const Image<Real>& image);

// Normalized input tensor the backbone consumes.
FeatureMap<Real> normalize_input(const ClassifierHandle& handle, const Image<Real>& image);

// Forward pass retaining what image_gradient() needs.
struct FeatureTrace {
  BackboneTrace<Real> backbone;
  FeatureVector features;
};

FeatureTrace trace_features(const ClassifierHandle& handle, const Image<Real>& image);

// dL/d(image pixels) given dL/d(features) for the traced image.
Image<Real> image_gradient(const ClassifierHandle& handle, const FeatureTrace& trace,
                           const FeatureVector& dfeatures);

// Model file I/O (JSON). The original file is never rewritten by the
// library; edited decision layers go to separate checkpoint files.
void save_model(const ClassifierHandle& handle, const std::filesystem::path& path);
ClassifierHandle load_model(const std::filesystem::path& path);

void save_decision_layer(const DecisionLayer<Real>& layer, const std::filesystem::path& path);
DecisionLayer<Real> load_decision_layer(const std::filesystem::path& path);

}  // namespace neuronlens

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
#include <string>
#include <vector>

#include "neuronlens/editor.hpp"
#include "neuronlens/model.hpp"
#include "neuronlens/scenarios.hpp"

// Test and demo fixtures. Backbone training is not part of the workbench
// itself; this library exists so the planted scenario has a plausible
// pretrained extractor to debug.
namespace neuronlens::fixtures {

// Generic pretraining task: every known shape, with a random coloured patch
// (or none) drawn independently of the shape. Two linear heads on the pooled
// features predict the shape and the patch colour.
struct PretrainConfig {
  std::string architecture = "planted-cnn";
  int images_per_shape = 120;
  Real patch_probability = 0.6;
  int epochs = 25;
  int batch_size = 16;
  Real learning_rate = 3e-3;
  Real weight_decay = 1e-3;
  Real clip_norm = 1.0;         // global gradient norm per batch
  Real feature_penalty = 1e-2;  // weight of the squared pooled-feature norm
  int image_size = 64;
  Real pixel_noise = 0.06;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::vector<Real> epoch_loss;
  Real shape_accuracy = 0.0;   // on the pretraining images, final epoch
  Real colour_accuracy = 0.0;
};

Backbone<Real> pretrain_backbone(const PretrainConfig& config, PretrainReport* report = nullptr);

// Decision-layer fitting for a frozen extractor, starting from zeros.
struct HeadConfig {
  int epochs = 20;
  int batch_size = 8;
  Real learning_rate = 2e-3;
  std::uint64_t seed = 0;
};

struct PlantedFixture {
  ClassifierHandle handle;
  Dataset dataset;
  int planted_neuron = -1;
  std::vector<Real> confound_correlation;  // per neuron, over confound pairs
  PretrainReport pretrain;
};

// Index of the neuron whose activation correlates most with the confound
// indicator over render_confound_pairs().
int planted_neuron_by_correlation(const ClassifierHandle& handle, const ScenarioSpec& spec,
                                  int pairs_per_class, std::uint64_t seed,
                                  std::vector<Real>* correlations = nullptr);

PlantedFixture make_planted_fixture(const ScenarioSpec& spec, const PretrainConfig& pretrain,
                                    const HeadConfig& head);

// Untrained toy network with a seeded random head, for quick tests.
ClassifierHandle make_toy_classifier(std::uint64_t seed, int num_classes = 5, Real head_stddev = 0.1);

}  // namespace neuronlens::fixtures

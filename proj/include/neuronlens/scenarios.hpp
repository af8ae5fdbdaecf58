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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neuronlens/model.hpp"

namespace neuronlens {

struct Sample {
  std::string id;
  Image<Real> image;
  int label = 0;
  int group = -1;         // index into Dataset::group_names, -1 if unknown
  bool confound = false;  // ground truth: the planted attribute is present
};

struct Split {
  std::string name;
  std::vector<Sample> samples;
};

// A planted spurious correlation: `confound_attribute` is drawn on images of
// `confounded_class` at the given rates; other classes never carry it.
struct ScenarioSpec {
  std::vector<std::string> base_classes{"disk", "ring", "square", "frame", "triangle"};
  int confounded_class = 0;
  std::string confound_attribute = "magenta_patch";
  Real train_confound_rate = 1.0;
  Real test_confound_rate = 0.0;
  // Per-class sample counts. Validation follows the training confound rate.
  int train_per_class = 100;
  int val_per_class = 100;
  int test_per_class = 100;
  std::uint64_t seed = 0;
  int image_size = 64;
  Real pixel_noise = 0.06;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<std::string> group_names;
  std::vector<Split> splits;
  std::optional<ScenarioSpec> scenario;

  const Split& split(const std::string& name) const;
  bool has_split(const std::string& name) const;
};

std::vector<std::string> known_shapes();
std::vector<std::string> known_confound_attributes();

// Renders one image. `shape` indexes known_shapes(); `confound` names an
// attribute from known_confound_attributes() or is empty. Output pixels are
// quantized to 8 bits so PNG round trips are exact.
Image<Real> render_shape_image(const std::string& shape, const std::string& confound,
                               std::uint64_t seed, int size = 64, Real pixel_noise = 0.06);

Dataset synth_planted_dataset(const ScenarioSpec& spec);

// Pairs of the same rendering without and with the planted attribute, over all
// classes. Used to locate the neuron that encodes the confound.
std::vector<std::pair<Image<Real>, Image<Real>>> render_confound_pairs(const ScenarioSpec& spec,
                                                                        int pairs_per_class,
                                                                        std::uint64_t seed);

// Stratified per class; every class keeps at least one sample on each side.
std::pair<Split, Split> split_validation(const Split& data, int num_classes,
                                         Real fraction = 0.15, std::uint64_t seed = 0);

struct MistakeSample {
  std::string sample_id;
  int predicted_class = 0;
  int true_class = 0;
};

struct MistakeSet {
  int class_id = 0;
  std::string source_split;
  std::vector<MistakeSample> samples;
};

MistakeSet collect_mistakes(const ClassifierHandle& handle, const Split& split, int class_id);

const Sample& find_sample(const Split& split, const std::string& id);

struct LabeledFeatures {
  std::vector<FeatureVector> features;
  std::vector<int> labels;
  std::vector<int> groups;

  std::size_t size() const { return features.size(); }
};

LabeledFeatures features_for_split(const ClassifierHandle& handle, const Split& split);

// On disk: <root>/<split>/<class>/<id>.png plus <root>/metadata.json holding
// class names, group names, per-sample labels/groups/confound flags and the
// scenario spec when the dataset was synthesized.
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);

// Reads the layout written by save_dataset. Without metadata.json the
// one-directory-per-class convention is used: either <root>/<class>/*.png
// (single split "all") or <root>/<split>/<class>/*.png.
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace neuronlens

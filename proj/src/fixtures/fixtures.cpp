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

#include "neuronlens/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "neuronlens/optim.hpp"

namespace neuronlens::fixtures {
namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

FeatureMap<Real> normalized(const Image<Real>& image, const InputSpec& spec) {
  FeatureMap<Real> x = image;
  for (int c = 0; c < spec.channels; ++c) {
    x.planes.row(c) = (x.planes.row(c).array() - spec.mean[c]) / spec.stddev[c];
  }
  return x;
}

struct PretrainItem {
  FeatureMap<Real> input;
  int shape = 0;
  int colour = 0;  // 0 = no patch
};

std::vector<std::span<Real>> layer_spans(DecisionLayer<Real>& layer) {
  return {{layer.coefficients.data(), static_cast<std::size_t>(layer.coefficients.size())},
          {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}};
}

std::vector<std::span<const Real>> layer_spans(const DecisionLayer<Real>& layer) {
  return {{layer.coefficients.data(), static_cast<std::size_t>(layer.coefficients.size())},
          {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}};
}

}  // namespace

Backbone<Real> pretrain_backbone(const PretrainConfig& config, PretrainReport* report) {
  const std::vector<std::string> shapes = known_shapes();
  const std::vector<std::string> colours = known_confound_attributes();
  const InputSpec spec;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);

  std::vector<PretrainItem> items;
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    for (int i = 0; i < config.images_per_shape; ++i) {
      PretrainItem item;
      item.shape = static_cast<int>(s);
      if (unit(rng) < config.patch_probability) {
        item.colour = 1 + static_cast<int>(rng() % colours.size());
      }
      const std::string patch = item.colour == 0 ? "" : colours[static_cast<std::size_t>(item.colour - 1)];
      item.input = normalized(render_shape_image(shapes[s], patch, mix_seed(config.seed, s, i),
                                                 config.image_size, config.pixel_noise),
                              spec);
      items.push_back(std::move(item));
    }
  }

  Backbone<Real> backbone = make_registered_backbone(config.architecture, config.seed);
  const int dim = backbone.output_channels();
  DecisionLayer<Real> shape_head = DecisionLayer<Real>::zeros(static_cast<int>(shapes.size()), dim);
  DecisionLayer<Real> colour_head =
      DecisionLayer<Real>::zeros(static_cast<int>(colours.size()) + 1, dim);
  AdamW<Real> optimizer({0.9, 0.999, 1e-8, config.weight_decay});

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  const int steps_per_epoch =
      static_cast<int>((items.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                       static_cast<std::size_t>(config.batch_size));
  const int total_steps = steps_per_epoch * config.epochs;
  int step = 0;
  int shape_hits = 0;
  int colour_hits = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Real loss_sum = 0.0;
    shape_hits = 0;
    colour_hits = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const Real inv = 1.0 / static_cast<Real>(stop - start);
      std::vector<Matrix<Real>> grads = backbone.zero_gradients();
      DecisionLayer<Real> dshape = DecisionLayer<Real>::zeros(shape_head.num_classes(), dim);
      DecisionLayer<Real> dcolour = DecisionLayer<Real>::zeros(colour_head.num_classes(), dim);
      for (std::size_t i = start; i < stop; ++i) {
        const PretrainItem& item = items[order[i]];
        const BackboneTrace<Real> trace = backbone.forward_traced(item.input);
        const FeatureVector f = global_average_pool(trace.output);
        const Vector<Real> zs = logits(shape_head, f);
        const Vector<Real> zc = logits(colour_head, f);
        loss_sum += cross_entropy(zs, item.shape) + cross_entropy(zc, item.colour);
        shape_hits += argmax(zs) == item.shape ? 1 : 0;
        colour_hits += argmax(zc) == item.colour ? 1 : 0;
        const Vector<Real> gs = inv * cross_entropy_logit_gradient(zs, item.shape);
        const Vector<Real> gc = inv * cross_entropy_logit_gradient(zc, item.colour);
        dshape.coefficients.noalias() += gs * f.transpose();
        dshape.bias += gs;
        dcolour.coefficients.noalias() += gc * f.transpose();
        dcolour.bias += gc;
        loss_sum += config.feature_penalty * f.squaredNorm();
        const FeatureVector df = shape_head.coefficients.transpose() * gs +
                                 colour_head.coefficients.transpose() * gc +
                                 (2.0 * config.feature_penalty * inv) * f;
        backbone.backward(trace,
                          global_average_pool_backward<Real>(df, trace.output.height, trace.output.width),
                          &grads);
      }
      std::vector<std::span<Real>> params = backbone.parameter_spans();
      std::vector<std::span<const Real>> grad_spans;
      for (const auto& g : grads) grad_spans.emplace_back(g.data(), static_cast<std::size_t>(g.size()));
      for (auto s : layer_spans(shape_head)) params.push_back(s);
      for (auto s : layer_spans(colour_head)) params.push_back(s);
      for (auto s : layer_spans(static_cast<const DecisionLayer<Real>&>(dshape))) grad_spans.push_back(s);
      for (auto s : layer_spans(static_cast<const DecisionLayer<Real>&>(dcolour))) grad_spans.push_back(s);
      Real squared = 0.0;
      for (const auto& g : grad_spans) {
        for (Real v : g) squared += v * v;
      }
      const Real norm = std::sqrt(squared);
      if (norm > config.clip_norm) {
        for (auto& g : grads) g *= config.clip_norm / norm;
        dshape.coefficients *= config.clip_norm / norm;
        dshape.bias *= config.clip_norm / norm;
        dcolour.coefficients *= config.clip_norm / norm;
        dcolour.bias *= config.clip_norm / norm;
      }
      optimizer.step(params, grad_spans,
                     warmup_cosine(config.learning_rate, step, steps_per_epoch, total_steps));
      ++step;
    }
    if (report != nullptr) report->epoch_loss.push_back(loss_sum / static_cast<Real>(items.size()));
  }
  if (report != nullptr) {
    report->shape_accuracy = static_cast<Real>(shape_hits) / static_cast<Real>(items.size());
    report->colour_accuracy = static_cast<Real>(colour_hits) / static_cast<Real>(items.size());
  }
  return backbone;
}

int planted_neuron_by_correlation(const ClassifierHandle& handle, const ScenarioSpec& spec,
                                  int pairs_per_class, std::uint64_t seed,
                                  std::vector<Real>* correlations) {
  const auto pairs = render_confound_pairs(spec, pairs_per_class, seed);
  const int dim = handle.feature_dim();
  const auto n = static_cast<Eigen::Index>(2 * pairs.size());
  Matrix<Real> activations(n, dim);
  Vector<Real> indicator(n);
  Eigen::Index row = 0;
  for (const auto& [clean, patched] : pairs) {
    activations.row(row) = extract_features(handle, clean).transpose();
    indicator(row++) = 0.0;
    activations.row(row) = extract_features(handle, patched).transpose();
    indicator(row++) = 1.0;
  }
  const Vector<Real> centered_indicator = indicator.array() - indicator.mean();
  std::vector<Real> corr(static_cast<std::size_t>(dim), 0.0);
  for (int k = 0; k < dim; ++k) {
    const Vector<Real> a = activations.col(k).array() - activations.col(k).mean();
    const Real denom = a.norm() * centered_indicator.norm();
    corr[static_cast<std::size_t>(k)] = denom > 0 ? a.dot(centered_indicator) / denom : 0.0;
  }
  const auto best = std::max_element(corr.begin(), corr.end());
  if (correlations != nullptr) *correlations = corr;
  return static_cast<int>(best - corr.begin());
}

PlantedFixture make_planted_fixture(const ScenarioSpec& spec, const PretrainConfig& pretrain,
                                    const HeadConfig& head) {
  PretrainReport report;
  Backbone<Real> backbone = pretrain_backbone(pretrain, &report);
  Dataset dataset = synth_planted_dataset(spec);
  const int num_classes = static_cast<int>(spec.base_classes.size());
  const int dim = backbone.output_channels();
  const ClassifierHandle untrained(std::make_shared<const Backbone<Real>>(std::move(backbone)),
                                   DecisionLayer<Real>::zeros(num_classes, dim), InputSpec{},
                                   spec.base_classes, pretrain.architecture);

  EditPlan plan;
  plan.epochs = head.epochs;
  plan.batch_size = head.batch_size;
  plan.learning_rate = head.learning_rate;
  plan.schedule = Schedule::kCosine;
  plan.patience = head.epochs;
  plan.seed = head.seed;
  const EditOutcome fit =
      train_decision_layer(untrained.layer(), features_for_split(untrained, dataset.split("train")),
                           features_for_split(untrained, dataset.split("val")), plan,
                           EditMethod::kNone);

  PlantedFixture fixture{untrained.with_decision_layer(fit.edited_layer), std::move(dataset), -1, {},
                         std::move(report)};
  fixture.planted_neuron =
      planted_neuron_by_correlation(fixture.handle, spec, 20, spec.seed ^ 0x5eedULL,
                                    &fixture.confound_correlation);
  return fixture;
}

ClassifierHandle make_toy_classifier(std::uint64_t seed, int num_classes, Real head_stddev) {
  Backbone<Real> backbone = make_registered_backbone("toy-cnn", seed);
  std::mt19937_64 rng(seed ^ 0x70f1ULL);
  std::normal_distribution<Real> normal(0.0, 1.0);
  DecisionLayer<Real> layer = DecisionLayer<Real>::zeros(num_classes, backbone.output_channels());
  for (Eigen::Index i = 0; i < layer.coefficients.size(); ++i) layer.coefficients.data()[i] = head_stddev * normal(rng);
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.1 * head_stddev * normal(rng);
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) names.push_back("class" + std::to_string(c));
  return ClassifierHandle(std::make_shared<const Backbone<Real>>(std::move(backbone)), std::move(layer),
                          InputSpec{}, std::move(names), "toy-cnn");
}

}  // namespace neuronlens::fixtures

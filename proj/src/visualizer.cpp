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

#include "neuronlens/visualizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "neuronlens/hashing.hpp"
#include "neuronlens/optim.hpp"

namespace neuronlens {
namespace {

Real sigmoid(Real z) { return 1.0 / (1.0 + std::exp(-z)); }

int bin_of(int coordinate, int extent, int grid) {
  return static_cast<int>(static_cast<long long>(coordinate) * grid / extent);
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string fill_template(const std::string& pattern, const std::string& name) {
  const auto at = pattern.find("{}");
  return pattern.substr(0, at) + name + pattern.substr(at + 2);
}

Real quantile_of(std::vector<Real> values, Real q) {
  std::sort(values.begin(), values.end());
  const Real position = q * static_cast<Real>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(position));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (position - static_cast<Real>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

StubEncoderPair::StubEncoderPair(std::uint64_t seed, int embedding_dim, int grid)
    : seed_(seed), dim_(embedding_dim), grid_(grid) {
  const int inputs = 3 * grid * grid;
  std::mt19937_64 rng(splitmix64(seed ^ 0x1A6EULL));
  std::normal_distribution<Real> normal(0.0, 2.0 / std::sqrt(static_cast<Real>(inputs)));
  projection_.resize(dim_, inputs);
  for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = normal(rng);
}

Vector<Real> StubEncoderPair::pooled(const Image<Real>& image) const {
  if (image.channels != 3) throw Error(ErrorCode::kShapeMismatch, "stub encoder expects RGB");
  Vector<Real> sums = Vector<Real>::Zero(3 * grid_ * grid_);
  Vector<Real> counts = Vector<Real>::Zero(grid_ * grid_);
  for (int y = 0; y < image.height; ++y) {
    const int by = bin_of(y, image.height, grid_);
    for (int x = 0; x < image.width; ++x) {
      const int cell = by * grid_ + bin_of(x, image.width, grid_);
      counts(cell) += 1.0;
      for (int c = 0; c < 3; ++c) sums(c * grid_ * grid_ + cell) += image.at(c, y, x);
    }
  }
  for (int c = 0; c < 3; ++c) {
    sums.segment(c * grid_ * grid_, grid_ * grid_).array() /= counts.array().max(1.0);
  }
  return sums.array() - 0.5;
}

Real StubEncoderPair::shared_offset() const { return 0.5 * std::sqrt(static_cast<Real>(dim_)); }

Vector<Real> StubEncoderPair::encode_image(const Image<Real>& image) const {
  Vector<Real> e(dim_ + 1);
  e.head(dim_) = (projection_ * pooled(image)).array().tanh();
  e(dim_) = shared_offset();
  return e;
}

Image<Real> StubEncoderPair::image_vjp(const Image<Real>& image, const Vector<Real>& dembedding) const {
  const Vector<Real> e = encode_image(image).head(dim_);
  const Vector<Real> dpre = dembedding.head(dim_).array() * (1.0 - e.array().square());
  const Vector<Real> dpooled = projection_.transpose() * dpre;
  Vector<Real> counts = Vector<Real>::Zero(grid_ * grid_);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      counts(bin_of(y, image.height, grid_) * grid_ + bin_of(x, image.width, grid_)) += 1.0;
    }
  }
  Image<Real> grad = Image<Real>::zeros(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    const int by = bin_of(y, image.height, grid_);
    for (int x = 0; x < image.width; ++x) {
      const int cell = by * grid_ + bin_of(x, image.width, grid_);
      for (int c = 0; c < 3; ++c) grad.at(c, y, x) = dpooled(c * grid_ * grid_ + cell) / counts(cell);
    }
  }
  return grad;
}

Vector<Real> StubEncoderPair::encode_text(const std::string& text) const {
  Vector<Real> sum = Vector<Real>::Zero(dim_);
  for (const auto& token : tokenize(text)) {
    std::mt19937_64 rng(splitmix64(fnv1a(token) ^ seed_));
    std::normal_distribution<Real> normal(0.0, 1.0);
    for (int i = 0; i < dim_; ++i) sum(i) += normal(rng);
  }
  Vector<Real> e = Vector<Real>::Zero(dim_ + 1);
  const Real norm = sum.norm();
  if (norm > 0) e.head(dim_) = sum * (shared_offset() / norm);
  e(dim_) = shared_offset();
  return e;
}

std::vector<std::string> known_encoder_pairs() { return {"stub"}; }

std::shared_ptr<const ImageTextEncoder> make_encoder_pair(const std::string& name, std::uint64_t seed) {
  if (name == "stub") return std::make_shared<StubEncoderPair>(seed);
  throw Error(ErrorCode::kEncoderUnavailable,
              "encoder pair '" + name + "' is not available in this build");
}

std::vector<std::string> default_prompt_templates() {
  return {"itap of a {}.",         "a bad photo of the {}.", "a origami {}.",
          "a photo of the large {}.", "a {} in a video game.",  "art of the {}.",
          "a photo of the small {}."};
}

Vector<Real> build_prompt_embedding(const ImageTextEncoder& encoder, const std::string& class_name,
                                    const std::vector<std::string>& templates) {
  if (class_name.empty()) throw Error(ErrorCode::kInvalidArgument, "empty class name");
  if (templates.empty()) throw Error(ErrorCode::kInvalidArgument, "no prompt templates");
  Vector<Real> mean = Vector<Real>::Zero(encoder.embedding_dim());
  for (const auto& t : templates) {
    const auto first = t.find("{}");
    if (first == std::string::npos || t.find("{}", first + 2) != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "template needs exactly one {} placeholder: " + t);
    }
    const Vector<Real> e = encoder.encode_text(fill_template(t, class_name));
    const Real norm = e.norm();
    if (!(norm > 0)) throw Error(ErrorCode::kInvalidArgument, "prompt embeds to the zero vector");
    mean += e / norm;
  }
  mean /= static_cast<Real>(templates.size());
  return mean / mean.norm();
}

Real cosine_similarity(const Vector<Real>& a, const Vector<Real>& b) {
  const Real denom = a.norm() * b.norm();
  if (!(denom > 0)) return 0.0;
  return a.dot(b) / denom;
}

Real clip_alignment(const ImageTextEncoder& encoder, const Image<Real>& image,
                    const Vector<Real>& text_embedding) {
  return cosine_similarity(encoder.encode_image(image), text_embedding);
}

void validate(const IllusionSpec& spec, int feature_dim, int num_classes) {
  if (spec.neuron_id < 0 || spec.neuron_id >= feature_dim) {
    throw Error(ErrorCode::kNeuronOutOfRange, "neuron id out of range");
  }
  if (spec.class_id && (*spec.class_id < 0 || *spec.class_id >= num_classes)) {
    throw Error(ErrorCode::kInvalidArgument, "class id out of range");
  }
  if (!spec.class_id && spec.auto_classes < 1) {
    throw Error(ErrorCode::kInvalidArgument, "auto class count must be >= 1");
  }
  if (!(spec.gamma >= 0.0 && spec.gamma <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "gamma must lie in [0, 1]");
  }
  if (!(spec.epsilon >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must be >= 0");
  if (spec.steps < 1) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 1");
  if (!(spec.learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be > 0");
}

ObjectiveValue evaluate_objective(const ClassifierHandle& handle, const ImageObjective& objective,
                                  const Image<Real>& image, const ImageTextEncoder* encoder) {
  const FeatureTrace trace = trace_features(handle, image);
  const DecisionLayer<Real>& layer = handle.layer();
  ObjectiveValue out;
  IllusionStep& terms = out.terms;
  terms.activation = trace.features(objective.neuron_id);
  Real inner = terms.activation;
  if (objective.class_id >= 0) {
    terms.class_logit = logits(layer, trace.features)(objective.class_id);
    inner += objective.gamma * terms.class_logit;
  }
  Real weight = 1.0;
  Vector<Real> embedding;
  if (objective.text_embedding != nullptr) {
    embedding = encoder->encode_image(image);
    terms.alignment = cosine_similarity(embedding, *objective.text_embedding);
    weight = terms.alignment + objective.epsilon;
  }
  terms.loss = -weight * inner;

  FeatureVector dfeatures = FeatureVector::Zero(handle.feature_dim());
  dfeatures(objective.neuron_id) = -weight;
  if (objective.class_id >= 0) {
    dfeatures += (-weight * objective.gamma) * layer.coefficients.row(objective.class_id).transpose();
  }
  out.gradient = image_gradient(handle, trace, dfeatures);
  if (objective.text_embedding != nullptr) {
    const Vector<Real>& t = *objective.text_embedding;
    const Real en = embedding.norm();
    const Real tn = t.norm();
    if (en > 0 && tn > 0) {
      const Vector<Real> dcos = t / (en * tn) - terms.alignment * embedding / (en * en);
      out.gradient.planes += encoder->image_vjp(image, -inner * dcos).planes;
    }
  }
  return out;
}

Image<Real> noise_image(int height, int width, Real stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> normal(0.0, stddev);
  Image<Real> image = Image<Real>::zeros(3, height, width);
  for (Eigen::Index i = 0; i < image.planes.size(); ++i) image.planes.data()[i] = sigmoid(normal(rng));
  return image;
}

IllusionResult optimize_image(const ClassifierHandle& handle, const ImageObjective& objective,
                              const IllusionSpec& settings, const ImageTextEncoder* encoder) {
  if (objective.neuron_id < 0 || objective.neuron_id >= handle.feature_dim()) {
    throw Error(ErrorCode::kNeuronOutOfRange, "neuron id out of range");
  }
  if (settings.steps < 0) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 0");
  if (objective.text_embedding != nullptr && encoder == nullptr) {
    throw Error(ErrorCode::kEncoderUnavailable, "alignment term requested without an encoder");
  }
  const InputSpec& input = handle.input_spec();
  std::mt19937_64 init_rng(settings.seed);
  std::normal_distribution<Real> normal(0.0, settings.init_stddev);
  RowMajorMatrix<Real> z(input.channels, input.height * input.width);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(init_rng);
  Image<Real> image = Image<Real>::zeros(input.channels, input.height, input.width);
  image.planes = z.unaryExpr([](Real v) { return sigmoid(v); });

  std::mt19937_64 augment_rng(splitmix64(settings.seed));
  AdamW<Real> optimizer({0.9, 0.999, 1e-8, settings.weight_decay});
  IllusionResult result;
  result.spec = settings;
  result.class_id = objective.class_id;
  result.trace.reserve(static_cast<std::size_t>(settings.steps));
  RowMajorMatrix<Real> dz;
  for (int step = 0; step < settings.steps; ++step) {
    const AugmentParams params = sample_augment(augment_rng, settings.augment);
    const ObjectiveValue value =
        evaluate_objective(handle, objective, apply_augment(image, params), encoder);
    if (!std::isfinite(value.terms.loss) || !value.gradient.planes.allFinite()) {
      throw Error(ErrorCode::kNonFiniteLoss,
                  "image objective became non-finite at step " + std::to_string(step));
    }
    result.trace.push_back(value.terms);
    const Image<Real> dimage = apply_augment_adjoint(value.gradient, params);
    dz = dimage.planes.array() * image.planes.array() * (1.0 - image.planes.array());
    const std::span<Real> p[] = {{z.data(), static_cast<std::size_t>(z.size())}};
    const std::span<const Real> g[] = {{dz.data(), static_cast<std::size_t>(dz.size())}};
    optimizer.step(p, g, cosine_annealing(settings.learning_rate, step, settings.steps));
    image.planes = z.unaryExpr([](Real v) { return sigmoid(v); });
  }

  const IllusionStep final_terms = evaluate_objective(handle, objective, image, encoder).terms;
  result.activation = final_terms.activation;
  result.class_logit = final_terms.class_logit;
  result.clip_alignment = final_terms.alignment;
  result.spatial_map = neuron_spatial_map(handle, image, objective.neuron_id);
  MaskResult mask = apply_mask(image, result.spatial_map, settings.mask_threshold,
                               settings.mask_brightness);
  result.masked_image = std::move(mask.image);
  result.mask_degenerate = mask.degenerate;
  result.image = std::move(image);
  return result;
}

IllusionResult generate_fv(const ClassifierHandle& handle, int neuron_id, int steps,
                           Real learning_rate, std::uint64_t seed) {
  IllusionSpec settings;
  settings.neuron_id = neuron_id;
  settings.steps = steps;
  settings.learning_rate = learning_rate;
  settings.seed = seed;
  settings.gamma = 0.0;
  settings.epsilon = 0.0;
  settings.prompt_templates.clear();
  ImageObjective objective;
  objective.neuron_id = neuron_id;
  return optimize_image(handle, objective, settings, nullptr);
}

IllusionResult generate_illusion(const ClassifierHandle& handle, const IllusionSpec& spec) {
  const auto encoder = make_encoder_pair(spec.encoder_pair);
  return generate_illusion(handle, spec, *encoder);
}

IllusionResult generate_illusion(const ClassifierHandle& handle, const IllusionSpec& spec,
                                 const ImageTextEncoder& encoder) {
  validate(spec, handle.feature_dim(), handle.num_classes());
  const int class_id =
      spec.class_id ? *spec.class_id : top_classes_for_neuron(handle.layer(), spec.neuron_id, 1).front();
  const Vector<Real> text = build_prompt_embedding(
      encoder, handle.class_names()[static_cast<std::size_t>(class_id)], spec.prompt_templates);
  ImageObjective objective;
  objective.neuron_id = spec.neuron_id;
  objective.class_id = class_id;
  objective.gamma = spec.gamma;
  objective.epsilon = spec.epsilon;
  objective.text_embedding = &text;
  return optimize_image(handle, objective, spec, &encoder);
}

std::vector<int> top_classes_for_neuron(const DecisionLayer<Real>& layer, int neuron_id, int k) {
  if (neuron_id < 0 || neuron_id >= layer.feature_dim()) {
    throw Error(ErrorCode::kNeuronOutOfRange, "neuron id out of range");
  }
  if (k < 1 || k > layer.num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "k must lie in [1, C]");
  }
  std::vector<int> order(static_cast<std::size_t>(layer.num_classes()));
  for (int c = 0; c < layer.num_classes(); ++c) order[static_cast<std::size_t>(c)] = c;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return layer.coefficients(a, neuron_id) > layer.coefficients(b, neuron_id);
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

Vector<Real> noise_activation_quantiles(const ClassifierHandle& handle, int count, Real quantile,
                                        std::uint64_t seed, Real stddev) {
  if (count < 1 || !(quantile >= 0.0 && quantile <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "need count >= 1 and quantile in [0, 1]");
  }
  const InputSpec& input = handle.input_spec();
  std::vector<std::vector<Real>> per_neuron(static_cast<std::size_t>(handle.feature_dim()));
  for (int i = 0; i < count; ++i) {
    const FeatureVector f = extract_features(
        handle, noise_image(input.height, input.width, stddev, splitmix64(seed + static_cast<std::uint64_t>(i))));
    for (int k = 0; k < handle.feature_dim(); ++k) per_neuron[static_cast<std::size_t>(k)].push_back(f(k));
  }
  Vector<Real> out(handle.feature_dim());
  for (int k = 0; k < handle.feature_dim(); ++k) {
    out(k) = quantile_of(std::move(per_neuron[static_cast<std::size_t>(k)]), quantile);
  }
  return out;
}

Matrix<Real> upsample_bilinear(const Matrix<Real>& map, int height, int width) {
  const auto h = static_cast<int>(map.rows());
  const auto w = static_cast<int>(map.cols());
  Matrix<Real> out(height, width);
  for (int y = 0; y < height; ++y) {
    const Real sy = std::clamp((y + 0.5) * h / height - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h - 1);
    const Real fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const Real sx = std::clamp((x + 0.5) * w / width - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w - 1);
      const Real fx = sx - x0;
      out(y, x) = (1 - fy) * ((1 - fx) * map(y0, x0) + fx * map(y0, x1)) +
                  fy * ((1 - fx) * map(y1, x0) + fx * map(y1, x1));
    }
  }
  return out;
}

MaskResult apply_mask(const Image<Real>& image, const SpatialActivationMap& map,
                      Real threshold_fraction, Real brightness) {
  if (map.grid.size() == 0 || (map.grid.array() < 0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "spatial map must be non-empty and non-negative");
  }
  MaskResult out;
  out.image = image;
  out.upsampled = upsample_bilinear(map.grid, image.height, image.width);
  const Real peak = map.grid.maxCoeff();
  if (!(peak > 0)) {
    out.degenerate = true;
    out.image.planes *= brightness;
    return out;
  }
  const Real threshold = threshold_fraction * peak;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (out.upsampled(y, x) < threshold) {
        for (int c = 0; c < image.channels; ++c) out.image.at(c, y, x) *= brightness;
      }
    }
  }
  return out;
}

CoreRelevance core_relevance(const IllusionResult& illusion,
                             const FeatureVector& class_representative,
                             const ClassifierHandle& handle) {
  if (illusion.mask_degenerate) {
    throw Error(ErrorCode::kDegenerateMap, "visualization has an all-zero activation map");
  }
  CoreRelevance out;
  out.neuron_id = illusion.spatial_map.neuron_id;
  out.class_id = illusion.class_id;
  out.with_mask_sim =
      cosine_similarity(extract_features(handle, illusion.masked_image), class_representative);
  out.without_mask_sim =
      cosine_similarity(extract_features(handle, illusion.image), class_representative);
  out.score = out.with_mask_sim - out.without_mask_sim;
  return out;
}

}  // namespace neuronlens

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

#include "neuronlens/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace neuronlens {
namespace {

using nlohmann::json;

constexpr const char* kModelFormat = "neuronlens-model/1";
constexpr const char* kLayerFormat = "neuronlens-decision-layer/1";

Conv2d<Real> he_conv(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng) {
  Conv2d<Real> conv = Conv2d<Real>::make(in, out, kernel, stride, pad);
  std::normal_distribution<Real> normal(0.0, std::sqrt(2.0 / (in * kernel * kernel)));
  for (Eigen::Index i = 0; i < conv.weight.size(); ++i) conv.weight.data()[i] = normal(rng);
  return conv;
}

Residual<Real> he_residual(int channels, std::mt19937_64& rng) {
  Residual<Real> block{he_conv(channels, channels, 3, 1, 1, rng),
                       he_conv(channels, channels, 3, 1, 1, rng)};
  // Damp the residual branch so a fresh block starts close to identity.
  block.second.weight *= 0.1;
  return block;
}

void require_input_geometry(const ClassifierHandle& handle, const Image<Real>& image) {
  const InputSpec& spec = handle.input_spec();
  if (image.channels != spec.channels || image.height != spec.height ||
      image.width != spec.width) {
    std::ostringstream msg;
    msg << "image is " << image.channels << "x" << image.height << "x" << image.width
        << ", model expects " << spec.channels << "x" << spec.height << "x" << spec.width;
    throw Error(ErrorCode::kShapeMismatch, msg.str());
  }
}

json matrix_to_json(const Matrix<Real>& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Vector<Real>& v) {
  return json(std::vector<Real>(v.data(), v.data() + v.size()));
}

Vector<Real> vector_from_json(const json& j, Eigen::Index expected) {
  const auto values = j.get<std::vector<Real>>();
  if (expected >= 0 && static_cast<Eigen::Index>(values.size()) != expected) {
    throw Error(ErrorCode::kWeightLoadError, "array length mismatch");
  }
  Vector<Real> v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

json conv_to_json(const Conv2d<Real>& c) {
  return {{"type", "conv"},
          {"in", c.in_channels},
          {"out", c.out_channels},
          {"kernel", c.kernel},
          {"stride", c.stride},
          {"pad", c.pad},
          {"weight", std::vector<Real>(c.weight.data(), c.weight.data() + c.weight.size())},
          {"bias", vector_to_json(c.bias)}};
}

Conv2d<Real> conv_from_json(const json& j) {
  Conv2d<Real> c = Conv2d<Real>::make(j.at("in").get<int>(), j.at("out").get<int>(),
                                      j.at("kernel").get<int>(), j.at("stride").get<int>(),
                                      j.at("pad").get<int>());
  if (c.in_channels <= 0 || c.out_channels <= 0 || c.kernel <= 0 || c.stride <= 0 || c.pad < 0) {
    throw Error(ErrorCode::kWeightLoadError, "invalid conv geometry");
  }
  const Vector<Real> w = vector_from_json(j.at("weight"), c.weight.size());
  std::copy(w.data(), w.data() + w.size(), c.weight.data());
  c.bias = vector_from_json(j.at("bias"), c.out_channels);
  if (!c.weight.allFinite() || !c.bias.allFinite()) {
    throw Error(ErrorCode::kWeightLoadError, "non-finite conv weights");
  }
  return c;
}

json layer_to_json(const DecisionLayer<Real>& layer) {
  return {{"type", "dense"},
          {"coefficients", matrix_to_json(layer.coefficients)},
          {"bias", vector_to_json(layer.bias)}};
}

DecisionLayer<Real> layer_from_json(const json& j) {
  const auto rows = j.at("coefficients").get<std::vector<std::vector<Real>>>();
  if (rows.empty() || rows.front().empty()) {
    throw Error(ErrorCode::kWeightLoadError, "empty decision layer");
  }
  DecisionLayer<Real> layer = DecisionLayer<Real>::zeros(static_cast<int>(rows.size()),
                                                         static_cast<int>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) {
      throw Error(ErrorCode::kWeightLoadError, "ragged decision layer");
    }
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      layer.coefficients(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  layer.bias = vector_from_json(j.at("bias"), layer.num_classes());
  if (!layer.coefficients.allFinite() || !layer.bias.allFinite()) {
    throw Error(ErrorCode::kWeightLoadError, "non-finite decision layer");
  }
  return layer;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kWeightLoadError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kWeightLoadError, path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump();
}

}  // namespace

ClassifierHandle::ClassifierHandle(std::shared_ptr<const Backbone<Real>> backbone,
                                   DecisionLayer<Real> layer, InputSpec input,
                                   std::vector<std::string> class_names, std::string architecture)
    : backbone_(std::move(backbone)),
      layer_(std::move(layer)),
      input_(input),
      class_names_(std::move(class_names)),
      architecture_(std::move(architecture)) {
  if (!backbone_) throw Error(ErrorCode::kInvalidArgument, "null backbone");
  if (layer_.feature_dim() != backbone_->output_channels()) {
    throw Error(ErrorCode::kUnsupportedArchitecture,
                "decision layer width " + std::to_string(layer_.feature_dim()) +
                    " does not match extractor output " +
                    std::to_string(backbone_->output_channels()));
  }
  if (input_.channels != backbone_->input_channels() || input_.channels != 3) {
    throw Error(ErrorCode::kUnsupportedArchitecture, "expected 3-channel input");
  }
  if (class_names_.empty()) {
    for (int c = 0; c < layer_.num_classes(); ++c) class_names_.push_back("class_" + std::to_string(c));
  }
  if (static_cast<int>(class_names_.size()) != layer_.num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "class name count does not match decision layer");
  }
}

ClassifierHandle ClassifierHandle::with_decision_layer(DecisionLayer<Real> layer) const {
  return ClassifierHandle(backbone_, std::move(layer), input_, class_names_, architecture_);
}

std::vector<std::string> registered_architectures() {
  return {"toy-cnn", "planted-cnn", "residual-18-style", "residual-50-style"};
}

Backbone<Real> make_registered_backbone(const std::string& name, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Layer<Real>> layers;
  if (name == "toy-cnn") {
    layers = {he_conv(3, 4, 3, 2, 1, rng), Relu{}, he_conv(4, 8, 3, 2, 1, rng), Relu{}};
  } else if (name == "planted-cnn") {
    layers = {he_conv(3, 16, 3, 2, 1, rng),  Relu{}, he_conv(16, 32, 3, 2, 1, rng), Relu{},
              he_conv(32, 32, 3, 2, 1, rng), Relu{}, he_conv(32, 32, 3, 1, 1, rng), Relu{}};
  } else if (name == "residual-18-style") {
    layers = {he_conv(3, 32, 3, 2, 1, rng),   Relu{}, he_residual(32, rng),
              he_conv(32, 64, 3, 2, 1, rng),  Relu{}, he_residual(64, rng),
              he_conv(64, 512, 3, 2, 1, rng), Relu{}};
  } else if (name == "residual-50-style") {
    layers = {he_conv(3, 32, 3, 2, 1, rng),    Relu{}, he_residual(32, rng),
              he_conv(32, 64, 3, 2, 1, rng),   Relu{}, he_residual(64, rng),
              he_conv(64, 256, 3, 2, 1, rng),  Relu{},
              he_conv(256, 2048, 1, 1, 0, rng), Relu{}};
  } else {
    throw Error(ErrorCode::kUnsupportedArchitecture, "unknown architecture '" + name + "'");
  }
  return Backbone<Real>(3, std::move(layers));
}

ClassifierHandle split_classifier(const ModelDescriptor& descriptor) {
  if (!descriptor.weights_path.empty()) return load_model(descriptor.weights_path);
  if (descriptor.num_classes < 1) {
    throw Error(ErrorCode::kInvalidArgument, "num_classes must be positive");
  }
  auto backbone = std::make_shared<const Backbone<Real>>(
      make_registered_backbone(descriptor.name, descriptor.seed));
  std::mt19937_64 rng(descriptor.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<Real> normal(0.0, 1.0 / std::sqrt(backbone->output_channels()));
  DecisionLayer<Real> layer =
      DecisionLayer<Real>::zeros(descriptor.num_classes, backbone->output_channels());
  for (Eigen::Index i = 0; i < layer.coefficients.size(); ++i) {
    layer.coefficients.data()[i] = normal(rng);
  }
  return ClassifierHandle(std::move(backbone), std::move(layer), InputSpec{}, {}, descriptor.name);
}

ClassifierHandle split_classifier(Backbone<Real> extractor, DecisionLayer<Real> layer,
                                  InputSpec input, std::vector<std::string> class_names) {
  return ClassifierHandle(std::make_shared<const Backbone<Real>>(std::move(extractor)),
                          std::move(layer), input, std::move(class_names));
}

FeatureMap<Real> normalize_input(const ClassifierHandle& handle, const Image<Real>& image) {
  require_input_geometry(handle, image);
  const InputSpec& spec = handle.input_spec();
  FeatureMap<Real> x = image;
  for (int c = 0; c < spec.channels; ++c) {
    x.planes.row(c) = (x.planes.row(c).array() - spec.mean[c]) / spec.stddev[c];
  }
  return x;
}

FeatureVector extract_features(const ClassifierHandle& handle, const Image<Real>& image) {
  return global_average_pool(handle.backbone().forward(normalize_input(handle, image)));
}

std::vector<FeatureVector> extract_features(const ClassifierHandle& handle,
                                            std::span<const Image<Real>> images) {
  std::vector<FeatureVector> out;
  out.reserve(images.size());
  for (const auto& image : images) out.push_back(extract_features(handle, image));
  return out;
}

DecisionLayer<Real> decision_weights(const ClassifierHandle& handle) { return handle.layer(); }

SpatialActivationMap neuron_spatial_map(const ClassifierHandle& handle, const Image<Real>& image,
                                        int neuron_id) {
  if (neuron_id < 0 || neuron_id >= handle.feature_dim()) {
    throw Error(ErrorCode::kNeuronOutOfRange,
                "neuron " + std::to_string(neuron_id) + " outside [0, " +
                    std::to_string(handle.feature_dim()) + ")");
  }
  const FeatureMap<Real> maps = handle.backbone().forward(normalize_input(handle, image));
  SpatialActivationMap out;
  out.neuron_id = neuron_id;
  out.grid.resize(maps.height, maps.width);
  for (int y = 0; y < maps.height; ++y) {
    for (int x = 0; x < maps.width; ++x) out.grid(y, x) = maps.at(neuron_id, y, x);
  }
  return out;
}

Vector<Real> predict(const ClassifierHandle& handle, const FeatureVector& features) {
  return class_probabilities(handle.layer(), features);
}

Vector<Real> predict_image(const ClassifierHandle& handle, const Image<Real>& image) {
  return predict(handle, extract_features(handle, image));
}

FeatureTrace trace_features(const ClassifierHandle& handle, const Image<Real>& image) {
  FeatureTrace trace;
  trace.backbone = handle.backbone().forward_traced(normalize_input(handle, image));
  trace.features = global_average_pool(trace.backbone.output);
  return trace;
}

Image<Real> image_gradient(const ClassifierHandle& handle, const FeatureTrace& trace,
                           const FeatureVector& dfeatures) {
  const FeatureMap<Real>& maps = trace.backbone.output;
  const FeatureMap<Real> dmaps =
      global_average_pool_backward<Real>(dfeatures, maps.height, maps.width);
  Image<Real> grad = handle.backbone().backward(trace.backbone, dmaps);
  const InputSpec& spec = handle.input_spec();
  for (int c = 0; c < spec.channels; ++c) grad.planes.row(c) /= spec.stddev[c];
  return grad;
}

void save_model(const ClassifierHandle& handle, const std::filesystem::path& path) {
  const InputSpec& spec = handle.input_spec();
  json layers = json::array();
  for (const auto& layer : handle.backbone().layers()) {
    if (std::holds_alternative<Relu>(layer)) {
      layers.push_back({{"type", "relu"}});
    } else if (const auto* conv = std::get_if<Conv2d<Real>>(&layer)) {
      layers.push_back(conv_to_json(*conv));
    } else {
      const auto& block = std::get<Residual<Real>>(layer);
      layers.push_back({{"type", "residual"},
                        {"first", conv_to_json(block.first)},
                        {"second", conv_to_json(block.second)}});
    }
  }
  json j = {{"format", kModelFormat},
            {"architecture", handle.architecture()},
            {"input",
             {{"height", spec.height},
              {"width", spec.width},
              {"channels", spec.channels},
              {"mean", spec.mean},
              {"std", spec.stddev}}},
            {"class_names", handle.class_names()},
            {"backbone", layers},
            {"head", layer_to_json(handle.layer())}};
  write_json_file(j, path);
}

ClassifierHandle load_model(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    if (j.value("format", "") != kModelFormat) {
      throw Error(ErrorCode::kWeightLoadError, "unrecognized model format");
    }
    if (!j.contains("head") || j.at("head").value("type", "") != "dense") {
      throw Error(ErrorCode::kUnsupportedArchitecture, "no dense decision layer after pooling");
    }
    InputSpec spec;
    const json& in = j.at("input");
    spec.height = in.at("height").get<int>();
    spec.width = in.at("width").get<int>();
    spec.channels = in.at("channels").get<int>();
    spec.mean = in.at("mean").get<std::array<Real, 3>>();
    spec.stddev = in.at("std").get<std::array<Real, 3>>();
    std::vector<Layer<Real>> layers;
    for (const json& l : j.at("backbone")) {
      const std::string type = l.at("type").get<std::string>();
      if (type == "relu") {
        layers.emplace_back(Relu{});
      } else if (type == "conv") {
        layers.emplace_back(conv_from_json(l));
      } else if (type == "residual") {
        layers.emplace_back(Residual<Real>{conv_from_json(l.at("first")), conv_from_json(l.at("second"))});
      } else {
        throw Error(ErrorCode::kUnsupportedArchitecture, "unknown layer type '" + type + "'");
      }
    }
    if (layers.empty() || (!std::holds_alternative<Relu>(layers.back()) &&
                           !std::holds_alternative<Residual<Real>>(layers.back()))) {
      throw Error(ErrorCode::kUnsupportedArchitecture,
                  "extractor must end in a rectified map before pooling");
    }
    auto backbone = std::make_shared<const Backbone<Real>>(spec.channels, std::move(layers));
    return ClassifierHandle(std::move(backbone), layer_from_json(j.at("head")), spec,
                            j.at("class_names").get<std::vector<std::string>>(),
                            j.value("architecture", "custom"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kWeightLoadError, path.string() + ": " + e.what());
  }
}

void save_decision_layer(const DecisionLayer<Real>& layer, const std::filesystem::path& path) {
  json j = layer_to_json(layer);
  j["format"] = kLayerFormat;
  write_json_file(j, path);
}

DecisionLayer<Real> load_decision_layer(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    if (j.value("format", "") != kLayerFormat) {
      throw Error(ErrorCode::kWeightLoadError, "unrecognized decision layer format");
    }
    return layer_from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kWeightLoadError, path.string() + ": " + e.what());
  }
}

}  // namespace neuronlens

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

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "neuronlens/errors.hpp"
#include "neuronlens/tensor.hpp"

namespace neuronlens {

inline int conv_output_extent(int input, int kernel, int stride, int pad) {
  return (input + 2 * pad - kernel) / stride + 1;
}

template <typename Scalar>
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  Matrix<Scalar> weight;  // out x (in * kernel * kernel), column = (c * k + ky) * k + kx
  Vector<Scalar> bias;    // out

  static Conv2d make(int in, int out, int kernel, int stride, int pad) {
    Conv2d c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    c.weight = Matrix<Scalar>::Zero(out, in * kernel * kernel);
    c.bias = Vector<Scalar>::Zero(out);
    return c;
  }

  int out_height(int h) const { return conv_output_extent(h, kernel, stride, pad); }
  int out_width(int w) const { return conv_output_extent(w, kernel, stride, pad); }

  RowMajorMatrix<Scalar> unfold(const FeatureMap<Scalar>& x) const {
    const int oh = out_height(x.height);
    const int ow = out_width(x.width);
    RowMajorMatrix<Scalar> cols = RowMajorMatrix<Scalar>::Zero(
        static_cast<Eigen::Index>(in_channels) * kernel * kernel, oh * ow);
    for (int c = 0; c < in_channels; ++c) {
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(c) * kernel + ky) * kernel + kx;
          Scalar* dst = cols.row(row).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= x.height) continue;
            const Scalar* src = x.planes.row(c).data() + static_cast<Eigen::Index>(iy) * x.width;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= x.width) continue;
              dst[oy * ow + ox] = src[ix];
            }
          }
        }
      }
    }
    return cols;
  }

  FeatureMap<Scalar> fold(const RowMajorMatrix<Scalar>& cols, int height, int width) const {
    const int oh = out_height(height);
    const int ow = out_width(width);
    FeatureMap<Scalar> x = FeatureMap<Scalar>::zeros(in_channels, height, width);
    for (int c = 0; c < in_channels; ++c) {
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(c) * kernel + ky) * kernel + kx;
          const Scalar* src = cols.row(row).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= height) continue;
            Scalar* dst = x.planes.row(c).data() + static_cast<Eigen::Index>(iy) * width;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= width) continue;
              dst[ix] += src[oy * ow + ox];
            }
          }
        }
      }
    }
    return x;
  }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) const {
    if (x.channels != in_channels) {
      throw Error(ErrorCode::kShapeMismatch, "conv input has " + std::to_string(x.channels) +
                                                 " channels, expected " +
                                                 std::to_string(in_channels));
    }
    FeatureMap<Scalar> y;
    y.channels = out_channels;
    y.height = out_height(x.height);
    y.width = out_width(x.width);
    y.planes.noalias() = weight * unfold(x);
    y.planes.colwise() += bias;
    return y;
  }

  // Returns dL/dx; accumulates parameter gradients when the outputs are given.
  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& x, const FeatureMap<Scalar>& dy,
                              Matrix<Scalar>* dweight, Vector<Scalar>* dbias) const {
    const RowMajorMatrix<Scalar> cols = unfold(x);
    if (dweight != nullptr) dweight->noalias() += dy.planes * cols.transpose();
    if (dbias != nullptr) *dbias += dy.planes.rowwise().sum();
    RowMajorMatrix<Scalar> dcols = weight.transpose() * dy.planes;
    return fold(dcols, x.height, x.width);
  }
};

struct Relu {};

// y = relu(x + conv2(relu(conv1(x)))); both convs preserve shape.
template <typename Scalar>
struct Residual {
  Conv2d<Scalar> first;
  Conv2d<Scalar> second;

  static Residual make(int channels) {
    return {Conv2d<Scalar>::make(channels, channels, 3, 1, 1),
            Conv2d<Scalar>::make(channels, channels, 3, 1, 1)};
  }
};

template <typename Scalar>
using Layer = std::variant<Conv2d<Scalar>, Relu, Residual<Scalar>>;

// Intermediate tensors one layer needs for its backward pass.
template <typename Scalar>
struct LayerCache {
  FeatureMap<Scalar> input;
  FeatureMap<Scalar> inner_pre;   // residual: conv1(x)
  FeatureMap<Scalar> inner_post;  // residual: relu(conv1(x))
  FeatureMap<Scalar> output_pre;  // residual: x + conv2(...)
};

template <typename Scalar>
struct BackboneTrace {
  std::vector<LayerCache<Scalar>> caches;
  FeatureMap<Scalar> output;  // pre-pooling penultimate maps
};

template <typename Scalar>
FeatureMap<Scalar> relu(const FeatureMap<Scalar>& x) {
  FeatureMap<Scalar> y = x;
  y.planes = y.planes.cwiseMax(Scalar(0));
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> relu_backward(const FeatureMap<Scalar>& x, const FeatureMap<Scalar>& dy) {
  FeatureMap<Scalar> dx = dy;
  dx.planes = (x.planes.array() > Scalar(0)).select(dy.planes, Scalar(0));
  return dx;
}

// Convolutional feature extractor ending in a non-negative D-channel map;
// the penultimate features are the spatial means of those channels.
template <typename Scalar>
class Backbone {
 public:
  Backbone() = default;
  Backbone(int input_channels, std::vector<Layer<Scalar>> layers)
      : input_channels_(input_channels), layers_(std::move(layers)) {
    int channels = input_channels_;
    for (const auto& layer : layers_) {
      if (const auto* conv = std::get_if<Conv2d<Scalar>>(&layer)) {
        if (conv->in_channels != channels) {
          throw Error(ErrorCode::kUnsupportedArchitecture, "conv channel chain is broken");
        }
        channels = conv->out_channels;
      } else if (const auto* block = std::get_if<Residual<Scalar>>(&layer)) {
        if (block->first.in_channels != channels || block->second.out_channels != channels) {
          throw Error(ErrorCode::kUnsupportedArchitecture, "residual block changes width");
        }
      }
    }
    output_channels_ = channels;
  }

  int input_channels() const { return input_channels_; }
  int output_channels() const { return output_channels_; }
  const std::vector<Layer<Scalar>>& layers() const { return layers_; }
  std::vector<Layer<Scalar>>& mutable_layers() { return layers_; }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x) const {
    FeatureMap<Scalar> h = x;
    for (const auto& layer : layers_) h = forward_layer(layer, h, nullptr);
    return h;
  }

  BackboneTrace<Scalar> forward_traced(const FeatureMap<Scalar>& x) const {
    BackboneTrace<Scalar> trace;
    trace.caches.resize(layers_.size());
    FeatureMap<Scalar> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = forward_layer(layers_[i], h, &trace.caches[i]);
    }
    trace.output = std::move(h);
    return trace;
  }

  // Gradient of the loss w.r.t. the backbone input given dL/d(output maps).
  // When `param_grads` is non-null it must come from zero_gradients() and
  // receives the accumulated parameter gradients.
  FeatureMap<Scalar> backward(const BackboneTrace<Scalar>& trace,
                              const FeatureMap<Scalar>& doutput,
                              std::vector<Matrix<Scalar>>* param_grads = nullptr) const {
    FeatureMap<Scalar> grad = doutput;
    std::size_t slot = 2 * conv_count();
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const auto& cache = trace.caches[i];
      const auto& layer = layers_[i];
      if (std::holds_alternative<Relu>(layer)) {
        grad = relu_backward(cache.input, grad);
      } else if (const auto* conv = std::get_if<Conv2d<Scalar>>(&layer)) {
        slot -= 2;
        grad = conv_backward(*conv, cache.input, grad, param_grads, slot);
      } else {
        const auto& block = std::get<Residual<Scalar>>(layer);
        slot -= 4;
        FeatureMap<Scalar> dpre = relu_backward(cache.output_pre, grad);
        FeatureMap<Scalar> dinner =
            conv_backward(block.second, cache.inner_post, dpre, param_grads, slot + 2);
        dinner = relu_backward(cache.inner_pre, dinner);
        FeatureMap<Scalar> dx =
            conv_backward(block.first, cache.input, dinner, param_grads, slot);
        dx.planes += dpre.planes;
        grad = std::move(dx);
      }
    }
    return grad;
  }

  // Parameter tensors in a fixed order: for every conv, weight then bias
  // (bias stored as a one-column matrix).
  std::vector<Matrix<Scalar>> zero_gradients() const {
    std::vector<Matrix<Scalar>> grads;
    for_each_conv([&](const Conv2d<Scalar>& c) {
      grads.push_back(Matrix<Scalar>::Zero(c.weight.rows(), c.weight.cols()));
      grads.push_back(Matrix<Scalar>::Zero(c.bias.size(), 1));
    });
    return grads;
  }

  std::vector<std::span<Scalar>> parameter_spans() {
    std::vector<std::span<Scalar>> spans;
    for_each_conv_mutable([&](Conv2d<Scalar>& c) {
      spans.emplace_back(c.weight.data(), static_cast<std::size_t>(c.weight.size()));
      spans.emplace_back(c.bias.data(), static_cast<std::size_t>(c.bias.size()));
    });
    return spans;
  }

  std::size_t conv_count() const {
    std::size_t n = 0;
    for_each_conv([&](const Conv2d<Scalar>&) { ++n; });
    return n;
  }

  template <typename Fn>
  void for_each_conv(Fn&& fn) const {
    for (const auto& layer : layers_) {
      if (const auto* conv = std::get_if<Conv2d<Scalar>>(&layer)) {
        fn(*conv);
      } else if (const auto* block = std::get_if<Residual<Scalar>>(&layer)) {
        fn(block->first);
        fn(block->second);
      }
    }
  }

  template <typename Fn>
  void for_each_conv_mutable(Fn&& fn) {
    for (auto& layer : layers_) {
      if (auto* conv = std::get_if<Conv2d<Scalar>>(&layer)) {
        fn(*conv);
      } else if (auto* block = std::get_if<Residual<Scalar>>(&layer)) {
        fn(block->first);
        fn(block->second);
      }
    }
  }

 private:
  static FeatureMap<Scalar> forward_layer(const Layer<Scalar>& layer, const FeatureMap<Scalar>& x,
                                          LayerCache<Scalar>* cache) {
    if (cache != nullptr) cache->input = x;
    if (std::holds_alternative<Relu>(layer)) return relu(x);
    if (const auto* conv = std::get_if<Conv2d<Scalar>>(&layer)) return conv->forward(x);
    const auto& block = std::get<Residual<Scalar>>(layer);
    FeatureMap<Scalar> inner_pre = block.first.forward(x);
    FeatureMap<Scalar> inner_post = relu(inner_pre);
    FeatureMap<Scalar> out_pre = block.second.forward(inner_post);
    out_pre.planes += x.planes;
    FeatureMap<Scalar> out = relu(out_pre);
    if (cache != nullptr) {
      cache->inner_pre = std::move(inner_pre);
      cache->inner_post = std::move(inner_post);
      cache->output_pre = std::move(out_pre);
    }
    return out;
  }

  static FeatureMap<Scalar> conv_backward(const Conv2d<Scalar>& conv, const FeatureMap<Scalar>& x,
                                          const FeatureMap<Scalar>& dy,
                                          std::vector<Matrix<Scalar>>* grads, std::size_t slot) {
    if (grads == nullptr) return conv.backward(x, dy, nullptr, nullptr);
    Matrix<Scalar>& dw = (*grads)[slot];
    Matrix<Scalar>& db_matrix = (*grads)[slot + 1];
    Vector<Scalar> db = Vector<Scalar>::Zero(conv.out_channels);
    FeatureMap<Scalar> dx = conv.backward(x, dy, &dw, &db);
    db_matrix.col(0) += db;
    return dx;
  }

  int input_channels_ = 3;
  int output_channels_ = 3;
  std::vector<Layer<Scalar>> layers_;
};

// Spatial mean of each channel: the post-pooling feature vector.
template <typename Scalar>
Vector<Scalar> global_average_pool(const FeatureMap<Scalar>& maps) {
  return maps.planes.rowwise().mean();
}

// Adjoint of global_average_pool.
template <typename Scalar, typename Derived>
FeatureMap<Scalar> global_average_pool_backward(const Eigen::MatrixBase<Derived>& dfeatures,
                                                int height, int width) {
  FeatureMap<Scalar> d = FeatureMap<Scalar>::zeros(static_cast<int>(dfeatures.size()), height, width);
  const Scalar scale = Scalar(1) / static_cast<Scalar>(height * width);
  for (Eigen::Index c = 0; c < dfeatures.size(); ++c) d.planes.row(c).setConstant(dfeatures(c) * scale);
  return d;
}

// FNV-1a over every parameter byte; used to prove the extractor is untouched.
template <typename Scalar>
std::uint64_t parameter_checksum(const Backbone<Scalar>& backbone) {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&](const Scalar* data, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(Scalar); ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ULL;
    }
  };
  backbone.for_each_conv([&](const Conv2d<Scalar>& c) {
    mix(c.weight.data(), c.weight.size());
    mix(c.bias.data(), c.bias.size());
  });
  return hash;
}

}  // namespace neuronlens

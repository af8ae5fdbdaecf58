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

#include <cmath>
#include <string>

#include "neuronlens/errors.hpp"

namespace neuronlens {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMajorMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Channel-planar activation volume. Row c holds channel c in raster order
// (index y * width + x), so a single channel is one contiguous row.
template <typename Scalar>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  RowMajorMatrix<Scalar> planes;

  static FeatureMap zeros(int c, int h, int w) {
    FeatureMap m;
    m.channels = c;
    m.height = h;
    m.width = w;
    m.planes = RowMajorMatrix<Scalar>::Zero(c, h * w);
    return m;
  }

  static FeatureMap constant(int c, int h, int w, Scalar value) {
    FeatureMap m = zeros(c, h, w);
    m.planes.setConstant(value);
    return m;
  }

  int pixels() const { return height * width; }

  Scalar& at(int c, int y, int x) { return planes(c, y * width + x); }
  Scalar at(int c, int y, int x) const { return planes(c, y * width + x); }

  bool same_shape(const FeatureMap& other) const {
    return channels == other.channels && height == other.height &&
           width == other.width;
  }

  template <typename Other>
  FeatureMap<Other> cast() const {
    FeatureMap<Other> m;
    m.channels = channels;
    m.height = height;
    m.width = width;
    m.planes = planes.template cast<Other>();
    return m;
  }
};

// RGB image with values in [0, 1], stored planar like FeatureMap.
template <typename Scalar>
using Image = FeatureMap<Scalar>;

template <typename Scalar>
void require_same_shape(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b,
                        const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": shape mismatch");
  }
}

}  // namespace neuronlens

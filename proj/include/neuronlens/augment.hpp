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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "neuronlens/tensor.hpp"

namespace neuronlens {

// One draw of the random transform applied before every optimization step.
struct AugmentParams {
  double angle_degrees = 0.0;
  double shift_x = 0.0;  // fraction of the width
  double shift_y = 0.0;  // fraction of the height
  double scale = 1.0;
  double blur_sigma = 0.0;  // pixels; 0 disables smoothing

  bool is_identity() const {
    return angle_degrees == 0.0 && shift_x == 0.0 && shift_y == 0.0 && scale == 1.0 &&
           blur_sigma <= 0.0;
  }
};

struct AugmentRanges {
  double max_angle_degrees = 15.0;
  double max_shift = 0.15;
  double min_scale = 0.7;
  double max_scale = 1.2;
  double blur_sigma = 0.8;
};

template <typename Rng>
AugmentParams sample_augment(Rng& rng, const AugmentRanges& ranges = {}) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  AugmentParams p;
  p.angle_degrees = between(-ranges.max_angle_degrees, ranges.max_angle_degrees);
  p.shift_x = between(-ranges.max_shift, ranges.max_shift);
  p.shift_y = between(-ranges.max_shift, ranges.max_shift);
  p.scale = between(ranges.min_scale, ranges.max_scale);
  p.blur_sigma = ranges.blur_sigma;
  return p;
}

namespace detail {

// Bilinear taps of one output pixel; source coordinates are clamped to the
// border, so every output is a convex combination of input pixels.
struct Taps {
  int index[4];
  double weight[4];
};

inline std::vector<Taps> warp_taps(const AugmentParams& p, int height, int width) {
  const double theta = p.angle_degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
  const double tx = p.shift_x * width, ty = p.shift_y * height;
  std::vector<Taps> taps(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      // Inverse map: undo translation, rotation, then scale.
      const double px = x - cx - tx, py = y - cy - ty;
      double sx = (ct * px + st * py) / p.scale + cx;
      double sy = (-st * px + ct * py) / p.scale + cy;
      sx = std::clamp(sx, 0.0, width - 1.0);
      sy = std::clamp(sy, 0.0, height - 1.0);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
      const double fx = sx - x0, fy = sy - y0;
      Taps& t = taps[static_cast<std::size_t>(y) * width + x];
      t.index[0] = y0 * width + x0;
      t.index[1] = y0 * width + x1;
      t.index[2] = y1 * width + x0;
      t.index[3] = y1 * width + x1;
      t.weight[0] = (1 - fx) * (1 - fy);
      t.weight[1] = fx * (1 - fy);
      t.weight[2] = (1 - fx) * fy;
      t.weight[3] = fx * fy;
    }
  }
  return taps;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable pass along one axis with replicated borders. With `adjoint` the
// transpose is applied instead (scatter rather than gather).
template <typename Scalar>
FeatureMap<Scalar> blur_axis(const FeatureMap<Scalar>& in, const std::vector<double>& kernel,
                             bool horizontal, bool adjoint) {
  FeatureMap<Scalar> out = FeatureMap<Scalar>::zeros(in.channels, in.height, in.width);
  const int radius = static_cast<int>(kernel.size() / 2);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        for (int i = -radius; i <= radius; ++i) {
          const int sx = horizontal ? std::clamp(x + i, 0, in.width - 1) : x;
          const int sy = horizontal ? y : std::clamp(y + i, 0, in.height - 1);
          const Scalar w = static_cast<Scalar>(kernel[static_cast<std::size_t>(i + radius)]);
          if (adjoint) {
            out.at(c, sy, sx) += w * in.at(c, y, x);
          } else {
            out.at(c, y, x) += w * in.at(c, sy, sx);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
FeatureMap<Scalar> gaussian_blur(const FeatureMap<Scalar>& image, double sigma) {
  if (sigma <= 0.0) return image;
  const auto k = detail::gaussian_kernel(sigma);
  return detail::blur_axis(detail::blur_axis(image, k, true, false), k, false, false);
}

template <typename Scalar>
FeatureMap<Scalar> gaussian_blur_adjoint(const FeatureMap<Scalar>& grad, double sigma) {
  if (sigma <= 0.0) return grad;
  const auto k = detail::gaussian_kernel(sigma);
  return detail::blur_axis(detail::blur_axis(grad, k, false, true), k, true, true);
}

// Rotation, translation and scale about the image centre, then smoothing.
template <typename Scalar>
FeatureMap<Scalar> apply_augment(const FeatureMap<Scalar>& image, const AugmentParams& p) {
  if (p.is_identity()) return image;
  const auto taps = detail::warp_taps(p, image.height, image.width);
  FeatureMap<Scalar> warped = FeatureMap<Scalar>::zeros(image.channels, image.height, image.width);
  for (int c = 0; c < image.channels; ++c) {
    const auto src = image.planes.row(c);
    auto dst = warped.planes.row(c);
    for (std::size_t i = 0; i < taps.size(); ++i) {
      const auto& t = taps[i];
      dst(static_cast<Eigen::Index>(i)) =
          static_cast<Scalar>(t.weight[0]) * src(t.index[0]) + static_cast<Scalar>(t.weight[1]) * src(t.index[1]) +
          static_cast<Scalar>(t.weight[2]) * src(t.index[2]) + static_cast<Scalar>(t.weight[3]) * src(t.index[3]);
    }
  }
  return gaussian_blur(warped, p.blur_sigma);
}

// Transpose of apply_augment: maps a gradient on the augmented image back to
// the source image.
template <typename Scalar>
FeatureMap<Scalar> apply_augment_adjoint(const FeatureMap<Scalar>& grad, const AugmentParams& p) {
  if (p.is_identity()) return grad;
  const FeatureMap<Scalar> unblurred = gaussian_blur_adjoint(grad, p.blur_sigma);
  const auto taps = detail::warp_taps(p, grad.height, grad.width);
  FeatureMap<Scalar> out = FeatureMap<Scalar>::zeros(grad.channels, grad.height, grad.width);
  for (int c = 0; c < grad.channels; ++c) {
    const auto g = unblurred.planes.row(c);
    auto dst = out.planes.row(c);
    for (std::size_t i = 0; i < taps.size(); ++i) {
      const auto& t = taps[i];
      const Scalar v = g(static_cast<Eigen::Index>(i));
      for (int j = 0; j < 4; ++j) dst(t.index[j]) += static_cast<Scalar>(t.weight[j]) * v;
    }
  }
  return out;
}

template <typename Scalar, typename Rng>
FeatureMap<Scalar> augment(const FeatureMap<Scalar>& image, Rng& rng, const AugmentRanges& ranges = {}) {
  return apply_augment(image, sample_augment(rng, ranges));
}

}  // namespace neuronlens

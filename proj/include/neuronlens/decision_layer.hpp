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
#include "neuronlens/tensor.hpp"

namespace neuronlens {

// Dense map from the D penultimate features to C class logits:
//   logit_i(f) = sum_k coefficients(i, k) * f[k] + bias[i]
template <typename Scalar>
struct DecisionLayer {
  Matrix<Scalar> coefficients;  // C x D
  Vector<Scalar> bias;          // C

  static DecisionLayer zeros(int num_classes, int feature_dim) {
    return {Matrix<Scalar>::Zero(num_classes, feature_dim),
            Vector<Scalar>::Zero(num_classes)};
  }

  int num_classes() const { return static_cast<int>(coefficients.rows()); }
  int feature_dim() const { return static_cast<int>(coefficients.cols()); }

  template <typename Other>
  DecisionLayer<Other> cast() const {
    return {coefficients.template cast<Other>(), bias.template cast<Other>()};
  }

  friend bool operator==(const DecisionLayer& a, const DecisionLayer& b) {
    return a.coefficients.rows() == b.coefficients.rows() &&
           a.coefficients.cols() == b.coefficients.cols() &&
           a.coefficients == b.coefficients && a.bias == b.bias;
  }
};

template <typename Scalar, typename Derived>
void require_feature_dim(const DecisionLayer<Scalar>& layer,
                         const Eigen::MatrixBase<Derived>& features) {
  if (features.size() != layer.feature_dim()) {
    throw Error(ErrorCode::kShapeMismatch,
                "feature length " + std::to_string(features.size()) +
                    " does not match decision layer width " +
                    std::to_string(layer.feature_dim()));
  }
}

template <typename Scalar, typename Derived>
Vector<Scalar> logits(const DecisionLayer<Scalar>& layer,
                      const Eigen::MatrixBase<Derived>& features) {
  require_feature_dim(layer, features);
  return layer.coefficients * features + layer.bias;
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  const Scalar peak = values.maxCoeff();
  if (!std::isfinite(peak)) return peak;
  return peak + std::log((values.array() - peak).exp().sum());
}

template <typename Derived>
Vector<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  const Scalar lse = log_sum_exp(values);
  return (values.array() - lse).matrix();
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& values) {
  return log_softmax(values).array().exp().matrix();
}

template <typename Scalar, typename Derived>
Vector<Scalar> class_probabilities(const DecisionLayer<Scalar>& layer,
                                   const Eigen::MatrixBase<Derived>& features) {
  return softmax(logits(layer, features));
}

template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& values) {
  Eigen::Index best = 0;
  values.maxCoeff(&best);
  return static_cast<int>(best);
}

// Cross-entropy of the softmax over `logit_values` against `label`.
template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& logit_values,
                                       int label) {
  return log_sum_exp(logit_values) - logit_values(label);
}

// d cross_entropy / d logits = softmax - onehot(label)
template <typename Derived>
Vector<typename Derived::Scalar> cross_entropy_logit_gradient(
    const Eigen::MatrixBase<Derived>& logit_values, int label) {
  Vector<typename Derived::Scalar> grad = softmax(logit_values);
  grad(label) -= 1;
  return grad;
}

}  // namespace neuronlens

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

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "neuronlens/errors.hpp"
#include "neuronlens/tensor.hpp"

namespace neuronlens {

// Adam with decoupled weight decay. Parameters are flat spans so any Eigen
// object can be optimized in place through a Map.
template <typename Scalar>
class AdamW {
 public:
  struct Config {
    Scalar beta1 = Scalar(0.9);
    Scalar beta2 = Scalar(0.999);
    Scalar epsilon = Scalar(1e-8);
    Scalar weight_decay = Scalar(0);
  };

  AdamW() = default;
  explicit AdamW(Config config) : config_(config) {}

  void step(std::span<const std::span<Scalar>> params,
            std::span<const std::span<const Scalar>> grads, Scalar learning_rate) {
    if (params.size() != grads.size()) {
      throw Error(ErrorCode::kInvalidArgument, "AdamW: parameter/gradient count mismatch");
    }
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.push_back(Vector<Scalar>::Zero(static_cast<Eigen::Index>(p.size())));
        second_.push_back(Vector<Scalar>::Zero(static_cast<Eigen::Index>(p.size())));
      }
    }
    ++steps_;
    const Scalar bias1 = Scalar(1) - std::pow(config_.beta1, static_cast<Scalar>(steps_));
    const Scalar bias2 = Scalar(1) - std::pow(config_.beta2, static_cast<Scalar>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Eigen::Map<Vector<Scalar>> value(params[i].data(), static_cast<Eigen::Index>(params[i].size()));
      Eigen::Map<const Vector<Scalar>> grad(grads[i].data(), static_cast<Eigen::Index>(grads[i].size()));
      first_[i] = config_.beta1 * first_[i] + (Scalar(1) - config_.beta1) * grad;
      second_[i] = config_.beta2 * second_[i] +
                   (Scalar(1) - config_.beta2) * grad.cwiseAbs2();
      if (config_.weight_decay != Scalar(0)) value *= Scalar(1) - learning_rate * config_.weight_decay;
      value.array() -= learning_rate * (first_[i].array() / bias1) /
                       ((second_[i].array() / bias2).sqrt() + config_.epsilon);
    }
  }

  int steps() const { return steps_; }

 private:
  Config config_;
  std::vector<Vector<Scalar>> first_;
  std::vector<Vector<Scalar>> second_;
  int steps_ = 0;
};

// lr_t = base * (1 + cos(pi * t / total)) / 2, t in [0, total).
template <typename Scalar>
Scalar cosine_annealing(Scalar base, int step, int total) {
  if (total <= 1) return base;
  const Scalar phase = static_cast<Scalar>(step) / static_cast<Scalar>(total);
  return base * Scalar(0.5) * (Scalar(1) + std::cos(std::numbers::pi_v<Scalar> * phase));
}

// Linear warmup to `peak` over `warmup` steps, then cosine decay.
template <typename Scalar>
Scalar warmup_cosine(Scalar peak, int step, int warmup, int total) {
  if (warmup > 0 && step < warmup) {
    return peak * static_cast<Scalar>(step + 1) / static_cast<Scalar>(warmup);
  }
  return cosine_annealing(peak, step - warmup, total - warmup);
}

}  // namespace neuronlens

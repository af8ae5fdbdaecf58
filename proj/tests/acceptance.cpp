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

// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits non-zero
// when any criterion fails. Pass criterion names as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "neuronlens/counterfactual.hpp"
#include "neuronlens/editor.hpp"
#include "neuronlens/evaluation.hpp"
#include "neuronlens/fixtures.hpp"
#include "neuronlens/image_io.hpp"
#include "neuronlens/scenarios.hpp"
#include "neuronlens/serialization.hpp"
#include "neuronlens/visualizer.hpp"
#include "test_support.hpp"

namespace {

using namespace neuronlens;
using Clock = std::chrono::steady_clock;

enum class Verdict { kPass, kFail, kSkip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome judge(bool ok, std::string detail) { return {ok ? Verdict::kPass : Verdict::kFail, std::move(detail)}; }

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// --- planted scenario, built on first use -----------------------------------

struct PlantedRun {
  fixtures::PlantedFixture fixture;
  MistakeSet mistakes;
  std::vector<OmegaResult> omegas;
  RankingReport ranking;
  std::vector<int> core;
  double seconds = 0.0;
};

ScenarioSpec planted_spec() {
  ScenarioSpec spec;
  spec.seed = 1;
  return spec;
}

PlantedRun build_planted_run() {
  const auto start = Clock::now();
  PlantedRun run{fixtures::make_planted_fixture(planted_spec(), {}, {}), {}, {}, {}, {}, 0.0};
  const ClassifierHandle& handle = run.fixture.handle;
  const Split& test = run.fixture.dataset.split("test");
  run.mistakes = collect_mistakes(handle, test, planted_spec().confounded_class);
  const LabeledFeatures features = features_for_split(handle, test);
  for (const auto& m : run.mistakes.samples) {
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
      if (test.samples[i].id != m.sample_id) continue;
      run.omegas.push_back(optimize_omega(features.features[i], m.true_class, handle.layer(), {}, m.sample_id));
    }
  }
  if (!run.omegas.empty()) {
    run.ranking = rank_neurons(run.omegas, 5, true);
    run.core = select_core_neurons(run.ranking, 0.03);
  }
  run.seconds = seconds_since(start);
  return run;
}

const PlantedRun& planted() {
  static const PlantedRun run = build_planted_run();
  return run;
}

IllusionSpec planted_illusion_spec() {
  IllusionSpec spec;
  spec.neuron_id = planted().fixture.planted_neuron;
  spec.class_id = planted_spec().confounded_class;
  spec.steps = 50;
  spec.seed = 11;
  return spec;
}

// --- criteria -----------------------------------------------------------------

Real brute_force_ratio(const DecisionLayer<Real>& layer, const FeatureVector& f, int i, int k) {
  auto softmax_at = [&](const FeatureVector& x) {
    const Vector<Real> z = layer.coefficients * x + layer.bias;
    const Real m = z.maxCoeff();
    return std::exp(z(i) - m) / (z.array() - m).exp().sum();
  };
  FeatureVector zeroed = f;
  zeroed(k) = 0.0;
  return softmax_at(f) / softmax_at(zeroed);
}

Outcome ratio_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20260);
  std::uniform_int_distribution<int> classes(2, 10), dims(1, 16);
  Real worst = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    const int c = classes(rng), d = dims(rng);
    const DecisionLayer<Real> layer = testing::random_layer(c, d, rng);
    const FeatureVector f = testing::random_vector(d, rng, 2.0);
    const int i = std::uniform_int_distribution<int>(0, c - 1)(rng);
    const int k = std::uniform_int_distribution<int>(0, d - 1)(rng);
    worst = std::max(worst, testing::relative_error(probability_ratio(layer, f, i, k).ratio,
                                                    brute_force_ratio(layer, f, i, k), 1e-300));
  }
  const double elapsed = seconds_since(start);
  return judge(worst <= 1e-9 && elapsed < 10.0, fmt("max rel err %.2e, %.2fs", worst, elapsed));
}

template <typename Loss>
Real layer_fd_error(DecisionLayer<Real> layer, const DecisionLayer<Real>& analytic, Loss loss) {
  Real worst = 0.0;
  for (Eigen::Index i = 0; i < layer.coefficients.size(); ++i) {
    const Real numeric = testing::central_difference([&] { return loss(layer); }, layer.coefficients.data()[i]);
    worst = std::max(worst, testing::relative_error(analytic.coefficients.data()[i], numeric, 1e-7));
  }
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
    const Real numeric = testing::central_difference([&] { return loss(layer); }, layer.bias(i));
    worst = std::max(worst, testing::relative_error(analytic.bias(i), numeric, 1e-7));
  }
  return worst;
}

LabeledFeatures random_batch(int n, int classes, int dim, std::mt19937_64& rng) {
  LabeledFeatures out;
  std::uniform_int_distribution<int> label(0, classes - 1);
  for (int b = 0; b < n; ++b) {
    out.features.push_back(testing::random_vector(dim, rng, 1.5));
    out.labels.push_back(label(rng));
    out.groups.push_back(-1);
  }
  return out;
}

Outcome gradient_suite() {
  const auto start = Clock::now();
  std::mt19937_64 rng(77);

  Real omega_err = 0.0;
  for (int point = 0; point < 10; ++point) {
    const DecisionLayer<Real> layer = testing::random_layer(5, 7, rng);
    const FeatureVector f = testing::random_vector(7, rng);
    FeatureVector omega = testing::random_vector(7, rng, 0.5);
    for (Eigen::Index i = 0; i < omega.size(); ++i) {
      if (std::abs(omega(i)) < 1e-2) omega(i) = 0.05;
    }
    const auto analytic = counterfactual_loss(layer, f, omega, point % 5, 0.1, 0.01);
    for (Eigen::Index i = 0; i < omega.size(); ++i) {
      const Real numeric = testing::central_difference(
          [&] { return counterfactual_loss(layer, f, omega, point % 5, 0.1, 0.01).value; }, omega(i));
      omega_err = std::max(omega_err, testing::relative_error(analytic.gradient(i), numeric));
    }
  }

  Real edit_err = 0.0, con_err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const DecisionLayer<Real> layer = testing::random_layer(4, 5, rng, 0.7);
    const LabeledFeatures data = random_batch(6, 4, 5, rng);
    const std::vector<EditTarget> targets{{trial % 4, 1}, {(trial + 1) % 4, 3}};
    for (PenaltyForm form : {PenaltyForm::kNorm, PenaltyForm::kSquared}) {
      auto loss = [&](const DecisionLayer<Real>& l) {
        return batch_cross_entropy(l, data.features, data.labels).value +
               ratio_penalty(l, data.features, targets, 1.02, form).value;
      };
      DecisionLayer<Real> grad = batch_cross_entropy(layer, data.features, data.labels).gradient;
      const auto pen = ratio_penalty(layer, data.features, targets, 1.02, form);
      grad.coefficients += pen.gradient.coefficients;
      grad.bias += pen.gradient.bias;
      edit_err = std::max(edit_err, layer_fd_error(layer, grad, loss));
    }
    auto con_loss = [&](const DecisionLayer<Real>& l) {
      return batch_cross_entropy(l, data.features, data.labels).value +
             coefficient_penalty(l, data.features, targets).value;
    };
    DecisionLayer<Real> grad = batch_cross_entropy(layer, data.features, data.labels).gradient;
    const auto pen = coefficient_penalty(layer, data.features, targets);
    grad.coefficients += pen.gradient.coefficients;
    grad.bias += pen.gradient.bias;
    con_err = std::max(con_err, layer_fd_error(layer, grad, con_loss));
  }

  const ClassifierHandle handle = fixtures::make_toy_classifier(2);
  const StubEncoderPair encoder(1);
  const Vector<Real> text = build_prompt_embedding(encoder, "class1", default_prompt_templates());
  Real pixel_err = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    const ImageObjective objective{trial + 1, trial, 0.7, 0.1, &text};
    Image<Real> image = testing::random_image(64, rng);
    const ObjectiveValue value = evaluate_objective(handle, objective, image, &encoder);
    std::uniform_int_distribution<Eigen::Index> pick(0, image.planes.size() - 1);
    for (int i = 0; i < 5; ++i) {
      const Eigen::Index at = pick(rng);
      const Real numeric = testing::central_difference(
          [&] { return evaluate_objective(handle, objective, image, &encoder).terms.loss; }, image.planes.data()[at]);
      pixel_err = std::max(pixel_err, testing::relative_error(value.gradient.planes.data()[at], numeric));
    }
  }
  const double elapsed = seconds_since(start);
  const bool ok = omega_err <= 1e-4 && edit_err <= 1e-4 && con_err <= 1e-4 && pixel_err <= 1e-3 && elapsed < 60.0;
  return judge(ok, fmt("omega %.1e, edit %.1e, coefficient %.1e, pixels %.1e, %.1fs", omega_err, edit_err,
                       con_err, pixel_err, elapsed));
}

Outcome flip_rate() {
  const PlantedRun& run = planted();
  if (run.omegas.empty()) return judge(false, "planted classifier made no mistakes on the confounded class");
  int flipped = 0;
  int within = 0;
  for (const auto& r : run.omegas) {
    flipped += r.flipped ? 1 : 0;
    within += r.flipped && r.steps_used <= 200 ? 1 : 0;
  }
  const Real rate = static_cast<Real>(within) / static_cast<Real>(run.omegas.size());
  return judge(rate >= 0.9, fmt("%d/%zu flipped within 200 steps (%.1f%%)", within, run.omegas.size(), 100.0 * rate));
}

Outcome planted_recovery() {
  const PlantedRun& run = planted();
  const int n = run.fixture.planted_neuron;
  if (run.omegas.empty()) return judge(false, "no mistakes to rank");
  const Real rate = run.ranking.rank_rate[static_cast<std::size_t>(n)];
  const bool core = std::find(run.core.begin(), run.core.end(), n) != run.core.end();
  return judge(rate >= 0.5 && core && run.seconds < 300.0,
               fmt("neuron %d (corr %.3f) rank rate %.3f, core %s, %zu mistakes, %.1fs", n,
                   run.fixture.confound_correlation[static_cast<std::size_t>(n)], rate, core ? "yes" : "no",
                   run.omegas.size(), run.seconds));
}

struct EditScores {
  Real target_gain = 0.0;  // confounded class, confound-free test split
  Real overall_drop = 0.0;  // in-distribution validation split
};

EditScores score_edit(const ClassifierHandle& handle, const DecisionLayer<Real>& edited, const Dataset& data,
                      int cls) {
  const ClassifierHandle after = handle.with_decision_layer(edited);
  const MetricsReport test_before = evaluate(handle, data.split("test"));
  const MetricsReport test_after = evaluate(after, data.split("test"));
  const MetricsReport val_before = evaluate(handle, data.split("val"));
  const MetricsReport val_after = evaluate(after, data.split("val"));
  return {100.0 * (test_after.per_class_acc.at(cls) - test_before.per_class_acc.at(cls)),
          100.0 * (val_before.avg_acc - val_after.avg_acc)};
}

Outcome editing_efficacy() {
  const PlantedRun& run = planted();
  const ClassifierHandle& handle = run.fixture.handle;
  const Dataset& data = run.fixture.dataset;
  const int cls = planted_spec().confounded_class;
  EditPlan plan;
  plan.targets = {{cls, run.fixture.planted_neuron}};
  plan.o = 1.0;
  plan.lambda3 = 1.0;
  const LabeledFeatures train = features_for_split(handle, data.split("train"));
  const LabeledFeatures val = features_for_split(handle, data.split("val"));
  const EditOutcome ours = train_decision_layer(handle.layer(), train, val, plan, EditMethod::kRatio);
  const EditOutcome con = train_decision_layer(handle.layer(), train, val, plan, EditMethod::kCoefficient);
  const EditScores a = score_edit(handle, ours.edited_layer, data, cls);
  const EditScores b = score_edit(handle, con.edited_layer, data, cls);
  const bool directional = b.overall_drop > a.overall_drop || b.target_gain < a.target_gain;
  return judge(a.target_gain >= 5.0 && a.overall_drop <= 2.0 && directional,
               fmt("ratio: class gain %+.1f, overall drop %.1f; coefficient: gain %+.1f, drop %.1f", a.target_gain,
                   a.overall_drop, b.target_gain, b.overall_drop));
}

Outcome regularizer_semantics() {
  // Penalty alone, squared form, full-batch gradient descent on a toy layer.
  std::mt19937_64 rng(19);
  DecisionLayer<Real> layer = testing::random_layer(4, 6, rng);
  const LabeledFeatures data = random_batch(4, 4, 6, rng);
  const EditTarget target{2, 3};
  // Backtracking keeps every accepted step non-increasing and finite.
  auto penalty_of = [&](const DecisionLayer<Real>& l) {
    return ratio_penalty(l, data.features, {target}, 1.0, PenaltyForm::kSquared);
  };
  auto current = penalty_of(layer);
  Real step = 0.5;
  int iterations = 0;
  for (; iterations < 5000000 && current.value > 1e-28 && step > 1e-12; ++iterations) {
    DecisionLayer<Real> trial = layer;
    trial.coefficients -= step * current.gradient.coefficients;
    trial.bias -= step * current.gradient.bias;
    auto next = penalty_of(trial);
    if (!std::isfinite(next.value) || next.value > current.value) {
      step *= 0.5;
      continue;
    }
    layer = std::move(trial);
    current = std::move(next);
    step = std::min(step * 1.5, 10.0);
  }
  const Real penalty = current.value;
  Real worst = 0.0;
  for (const auto& f : data.features) {
    for (int j = 0; j < layer.num_classes(); ++j) {
      const Real s = f(target.neuron_id) *
                     (layer.coefficients(j, target.neuron_id) - layer.coefficients(target.class_id, target.neuron_id));
      worst = std::max(worst, std::abs(s));
    }
  }
  const bool finite = std::isfinite(penalty) && std::isfinite(worst);
  return judge(finite && worst <= 1e-4, fmt("penalty %.1e after %d iterations, max |exponent gap| %.3g", penalty, iterations,
                                  worst));
}

Outcome visualizer_activation() {
  const auto start = Clock::now();
  const ClassifierHandle handle = fixtures::make_toy_classifier(0);
  const Vector<Real> q99 = noise_activation_quantiles(handle, 1000, 0.99, 7);
  int beats = 0;
  for (int n = 0; n < handle.feature_dim(); ++n) {
    IllusionSpec spec;
    spec.neuron_id = n;
    spec.class_id = top_classes_for_neuron(handle.layer(), n, 1).front();
    spec.seed = 1;
    beats += generate_illusion(handle, spec).activation > q99(n) ? 1 : 0;
  }
  const Real share = static_cast<Real>(beats) / handle.feature_dim();

  bool monotone = true;
  std::string sweep;
  for (int n = 0; n < 3; ++n) {
    const int cls = top_classes_for_neuron(handle.layer(), n, 1).front();
    Real previous = -std::numeric_limits<Real>::infinity();
    for (Real gamma : {0.0, 0.5, 1.0}) {
      Real mean = 0.0;
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        IllusionSpec spec;
        spec.neuron_id = n;
        spec.class_id = cls;
        spec.gamma = gamma;
        spec.seed = seed;
        mean += generate_illusion(handle, spec).class_logit / 5.0;
      }
      monotone = monotone && mean >= previous;
      previous = mean;
      sweep += fmt("%s%.3f", gamma == 0.0 ? (n == 0 ? "" : " | ") : " ", mean);
    }
  }
  return judge(share >= 0.9 && monotone, fmt("%d/%d neurons above noise q99; mean class logit by gamma: %s; %.0fs",
                                             beats, handle.feature_dim(), sweep.c_str(), seconds_since(start)));
}

Outcome full_scale_mirror() {
  return {Verdict::kSkip, "needs a pretrained large backbone and a production image-text encoder; not gating"};
}

Outcome determinism() {
  const PlantedRun& first = planted();
  const PlantedRun second = build_planted_run();
  const bool same_ranking = Json(first.ranking).dump() == Json(second.ranking).dump();
  const IllusionSpec spec = planted_illusion_spec();
  const IllusionResult a = generate_illusion(first.fixture.handle, spec);
  const IllusionResult b = generate_illusion(second.fixture.handle, spec);
  const bool same_image = encode_png(a.image) == encode_png(b.image);
  const bool same_mask = encode_png(a.masked_image) == encode_png(b.masked_image);
  return judge(same_ranking && same_image && same_mask,
               fmt("ranking JSON %s, image PNG %s, masked PNG %s", same_ranking ? "identical" : "differs",
                   same_image ? "identical" : "differs", same_mask ? "identical" : "differs"));
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  const std::vector<Criterion> criteria = {
      {"ratio-oracle", ratio_oracle},
      {"gradient-suite", gradient_suite},
      {"counterfactual-flip-rate", flip_rate},
      {"planted-neuron-recovery", planted_recovery},
      {"editing-efficacy", editing_efficacy},
      {"regularizer-semantics", regularizer_semantics},
      {"visualizer-activation", visualizer_activation},
      {"full-scale-mirror", full_scale_mirror},
      {"determinism", determinism},
  };
  const std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Outcome outcome{Verdict::kFail, ""};
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {Verdict::kFail, std::string("threw: ") + e.what()};
    }
    const char* label = outcome.verdict == Verdict::kPass ? "PASS" : outcome.verdict == Verdict::kFail ? "FAIL" : "SKIP";
    failures += outcome.verdict == Verdict::kFail ? 1 : 0;
    std::printf("%s  %-26s %s\n", label, c.name, outcome.detail.c_str());
  }
  return failures == 0 ? 0 : 1;
}

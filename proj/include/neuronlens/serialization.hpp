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

#include <filesystem>

#include <nlohmann/json.hpp>

#include "neuronlens/counterfactual.hpp"
#include "neuronlens/editor.hpp"
#include "neuronlens/evaluation.hpp"
#include "neuronlens/model.hpp"
#include "neuronlens/scenarios.hpp"
#include "neuronlens/visualizer.hpp"

// JSON forms of the artifacts a run persists. The to_json/from_json pairs
// follow nlohmann's ADL convention, so `nlohmann::json j = report;` works.
namespace neuronlens {

using Json = nlohmann::json;

Json vector_to_json(const Vector<Real>& v);
Vector<Real> vector_from_json(const Json& j);

void to_json(Json& j, const OmegaResult& r);
void from_json(const Json& j, OmegaResult& r);

// Rank rates are written as a sparse {"neuron_id": rate} map; neurons that
// never ranked are omitted and read back as 0.
void to_json(Json& j, const RankingReport& r);
void from_json(const Json& j, RankingReport& r);

void to_json(Json& j, const MistakeSet& m);
void from_json(const Json& j, MistakeSet& m);

void to_json(Json& j, const CounterfactualConfig& c);
void from_json(const Json& j, CounterfactualConfig& c);

void to_json(Json& j, const EditTarget& t);
void from_json(const Json& j, EditTarget& t);

void to_json(Json& j, const EditPlan& p);
void from_json(const Json& j, EditPlan& p);

// Layers are not embedded; the workbench stores them as checkpoint files.
void to_json(Json& j, const EditOutcome& o);

void to_json(Json& j, const RatioReport& r);

void to_json(Json& j, const MetricsReport& m);
void from_json(const Json& j, MetricsReport& m);

void to_json(Json& j, const SplitPredictions& p);
void from_json(const Json& j, SplitPredictions& p);

void to_json(Json& j, const DeltaReport& d);
void from_json(const Json& j, DeltaReport& d);

void to_json(Json& j, const IllusionSpec& s);
void from_json(const Json& j, IllusionSpec& s);

// Scalars and the optimization trace; images are written as PNG separately.
void to_json(Json& j, const IllusionResult& r);

void to_json(Json& j, const ModelDescriptor& d);
void from_json(const Json& j, ModelDescriptor& d);

void to_json(Json& j, const InputSpec& s);

void to_json(Json& j, const ScenarioSpec& s);
void from_json(const Json& j, ScenarioSpec& s);

std::string_view schedule_name(Schedule schedule);
Schedule schedule_from_name(const std::string& name);
std::string_view checkpoint_rule_name(CheckpointRule rule);
CheckpointRule checkpoint_rule_from_name(const std::string& name);
EditMethod edit_method_from_name(const std::string& name);

Json read_json(const std::filesystem::path& path);
// Writes through a temporary file and renames it into place.
void write_json(const Json& j, const std::filesystem::path& path, int indent = 2);

}  // namespace neuronlens

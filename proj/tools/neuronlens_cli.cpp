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

// Command-line front end. Every verb drives the same workbench the HTTP
// server uses, so the whole pipeline runs headlessly.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "neuronlens/errors.hpp"
#include "neuronlens/evaluation.hpp"
#include "neuronlens/fixtures.hpp"
#include "neuronlens/http_api.hpp"
#include "neuronlens/serialization.hpp"
#include "neuronlens/workbench.hpp"

namespace nl = neuronlens;
using nl::Json;

namespace {

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::vector<nl::EditTarget> parse_targets(const std::string& text) {
  std::vector<nl::EditTarget> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw nl::Error(nl::ErrorCode::kInvalidArgument, "target '" + item + "' is not class:neuron");
    }
    out.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
  }
  return out;
}

// Values from the config file win over flags.
Json with_config(Json from_flags, const std::string& config_path) {
  if (!config_path.empty()) from_flags.merge_patch(nl::read_json(config_path));
  return from_flags;
}

nl::WorkbenchOptions cli_options() {
  nl::WorkbenchOptions options;
  options.device = nl::device_from_environment();
  options.start_worker = false;
  return options;
}

void print_job(const nl::JobStatus& status) {
  std::cout << Json(status).dump(2) << "\n";
  if (status.state == nl::JobState::kFailed) throw nl::Error(nl::ErrorCode::kIoError, "job " + status.job_id + " failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuron-level classifier debugging workbench"};
  app.require_subcommand(1);
  std::string workspace = "neuronlens-workspace";
  std::string config;

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Write the planted-confound dataset to disk");
  std::string synth_out;
  nl::ScenarioSpec scenario;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", scenario.seed, "Scenario seed");
  synth->add_option("--train-per-class", scenario.train_per_class);
  synth->add_option("--val-per-class", scenario.val_per_class);
  synth->add_option("--test-per-class", scenario.test_per_class);
  synth->add_option("--confounded-class", scenario.confounded_class);
  synth->add_option("--attribute", scenario.confound_attribute);
  synth->add_option("--config", config, "JSON file overriding the flags");

  // make-fixture -------------------------------------------------------------
  auto* fixture = app.add_subcommand("make-fixture", "Pretrain a planted-scenario classifier and save it");
  std::string fixture_model = "planted_model.json", fixture_data;
  nl::fixtures::PretrainConfig pretrain;
  nl::fixtures::HeadConfig head;
  nl::ScenarioSpec fixture_scenario;
  fixture_scenario.seed = 1;
  fixture->add_option("--model-out", fixture_model, "Model JSON path");
  fixture->add_option("--data-out", fixture_data, "Also write the dataset here");
  fixture->add_option("--scenario-seed", fixture_scenario.seed);
  fixture->add_option("--pretrain-seed", pretrain.seed);
  fixture->add_option("--pretrain-epochs", pretrain.epochs);
  fixture->add_option("--head-epochs", head.epochs);

  // inspect ------------------------------------------------------------------
  auto* inspect = app.add_subcommand("inspect", "Create a run: mistakes, counterfactuals, neuron ranking");
  std::string model_path, arch, data_path;
  int class_id = 0, k = 5, scenario_seed = -1;
  double threshold = 0.03, lambda1 = 0.1, lambda2 = 0.01;
  int max_steps = 200;
  std::string mistake_split = "test";
  inspect->add_option("--workspace", workspace);
  inspect->add_option("--model", model_path, "Model JSON file");
  inspect->add_option("--arch", arch, "Registry architecture (untrained, seeded)");
  inspect->add_option("--data", data_path, "Dataset directory");
  inspect->add_option("--scenario-seed", scenario_seed, "Synthesize the planted scenario instead of --data");
  inspect->add_option("--class", class_id, "Class whose mistakes are inspected");
  inspect->add_option("--mistake-split", mistake_split);
  inspect->add_option("--k", k);
  inspect->add_option("--threshold", threshold, "Core-neuron rank-rate threshold");
  inspect->add_option("--lambda1", lambda1);
  inspect->add_option("--lambda2", lambda2);
  inspect->add_option("--max-steps", max_steps);
  inspect->add_option("--config", config, "JSON file overriding the flags");

  // visualize ----------------------------------------------------------------
  auto* visualize = app.add_subcommand("visualize", "Generate class-conditional neuron visualizations");
  std::string run_id, neurons, class_mode = "target";
  int steps = 400;
  double gamma = 0.7;
  std::uint64_t seed = 0;
  visualize->add_option("--workspace", workspace);
  visualize->add_option("--run", run_id)->required();
  visualize->add_option("--neurons", neurons, "Comma-separated neuron ids")->required();
  visualize->add_option("--classes", class_mode, "'target' or 'auto:<k>'");
  visualize->add_option("--steps", steps);
  visualize->add_option("--gamma", gamma);
  visualize->add_option("--seed", seed);
  visualize->add_option("--config", config, "JSON file overriding the flags");

  // edit ---------------------------------------------------------------------
  auto* edit = app.add_subcommand("edit", "Edit the decision layer against selected neurons");
  std::string targets, method = "ratio";
  nl::EditPlan plan;
  edit->add_option("--workspace", workspace);
  edit->add_option("--run", run_id)->required();
  edit->add_option("--targets", targets, "class:neuron pairs, comma-separated");
  edit->add_option("--method", method, "ratio, con or finetune");
  edit->add_option("--o", plan.o);
  edit->add_option("--lambda3", plan.lambda3);
  edit->add_option("--epochs", plan.epochs);
  edit->add_option("--lr", plan.learning_rate);
  edit->add_option("--batch-size", plan.batch_size);
  edit->add_option("--seed", plan.seed);
  edit->add_option("--config", config, "JSON file overriding the flags");

  // evaluate -----------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "Print metrics of a run, or of a model on a dataset split");
  std::string split = "test";
  bool as_json = false;
  evaluate->add_option("--workspace", workspace);
  evaluate->add_option("--run", run_id);
  evaluate->add_option("--model", model_path);
  evaluate->add_option("--data", data_path);
  evaluate->add_option("--split", split);
  evaluate->add_flag("--json", as_json);

  // suggest-o ----------------------------------------------------------------
  auto* suggest = app.add_subcommand("suggest-o", "Suggest the ratio target o for a run");
  suggest->add_option("--workspace", workspace);
  suggest->add_option("--run", run_id)->required();
  suggest->add_option("--targets", targets, "class:neuron pairs; default: the run's core neurons");

  // serve --------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  serve->add_option("--workspace", workspace);
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--static", static_dir, "Directory served at /");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto spec = with_config(Json(scenario), config).get<nl::ScenarioSpec>();
      nl::save_dataset(nl::synth_planted_dataset(spec), synth_out);
      std::cout << "wrote " << synth_out << "\n";
    } else if (fixture->parsed()) {
      const nl::fixtures::PlantedFixture f = nl::fixtures::make_planted_fixture(fixture_scenario, pretrain, head);
      nl::save_model(f.handle, fixture_model);
      if (!fixture_data.empty()) nl::save_dataset(f.dataset, fixture_data);
      std::cout << Json{{"model", fixture_model},
                        {"planted_neuron", f.planted_neuron},
                        {"pretrain_shape_accuracy", f.pretrain.shape_accuracy},
                        {"scenario", fixture_scenario}}
                       .dump(2)
                << "\n";
    } else if (inspect->parsed()) {
      nl::RunRequest request;
      request.model.weights_path = model_path;
      request.model.name = arch;
      if (scenario_seed >= 0) {
        nl::ScenarioSpec s;
        s.seed = static_cast<std::uint64_t>(scenario_seed);
        request.dataset.scenario = s;
        request.model.num_classes = static_cast<int>(s.base_classes.size());
      }
      request.dataset.path = data_path;
      request.class_id = class_id;
      request.mistake_split = mistake_split;
      request.k = k;
      request.core_threshold = threshold;
      request.counterfactual.lambda1 = lambda1;
      request.counterfactual.lambda2 = lambda2;
      request.counterfactual.max_steps = max_steps;
      request = with_config(Json(request), config).get<nl::RunRequest>();
      nl::Workbench bench(workspace, cli_options());
      const std::string id = bench.create_run(request);
      const Json run = bench.get_run(id);
      std::cout << "run " << id << " status " << run.at("status").get<std::string>() << "\n";
      for (const auto& s : run.at("stages")) {
        std::cout << "  " << s.at("stage").get<std::string>() << ": " << s.at("status").get<std::string>() << " "
                  << s.at("summary").dump() << "\n";
      }
      if (run.at("status") == "failed") return 1;
    } else if (visualize->parsed()) {
      nl::VisualizationRequest request;
      request.neuron_ids = parse_ints(neurons);
      request.class_mode = class_mode;
      request.spec_overrides = {{"steps", steps}, {"gamma", gamma}, {"seed", seed}};
      request = with_config(Json(request), config).get<nl::VisualizationRequest>();
      nl::Workbench bench(workspace, cli_options());
      print_job(bench.wait(bench.request_visualizations(run_id, request)));
    } else if (edit->parsed()) {
      nl::EditRequest request;
      request.plan = plan;
      request.plan.targets = parse_targets(targets);
      request.method = nl::edit_method_from_name(method);
      request = with_config(Json(request), config).get<nl::EditRequest>();
      nl::Workbench bench(workspace, cli_options());
      print_job(bench.wait(bench.submit_edit(run_id, request)));
      const Json metrics = bench.get_metrics(run_id);
      const Json& delta = metrics.at("edits").back().at("delta");
      if (!delta.is_null()) std::cout << nl::format_table(delta.get<nl::DeltaReport>());
    } else if (evaluate->parsed()) {
      if (!run_id.empty()) {
        nl::Workbench bench(workspace, cli_options());
        const Json metrics = bench.get_metrics(run_id);
        if (as_json) {
          std::cout << metrics.dump(2) << "\n";
        } else {
          for (const auto& [name, m] : metrics.at("original").items()) {
            std::cout << "original\n" << nl::format_table(m.get<nl::MetricsReport>()) << "\n";
          }
          for (const auto& e : metrics.at("edits")) {
            for (const auto& [name, m] : e.at("metrics").items()) {
              std::cout << "edit v" << e.at("version").get<int>() << " (" << e.at("method").get<std::string>()
                        << ")\n"
                        << nl::format_table(m.get<nl::MetricsReport>()) << "\n";
            }
          }
        }
      } else {
        if (model_path.empty() || data_path.empty()) {
          throw nl::Error(nl::ErrorCode::kInvalidArgument, "evaluate needs --run, or --model with --data");
        }
        const nl::ClassifierHandle handle = nl::load_model(model_path);
        const nl::Dataset dataset = nl::load_dataset(data_path);
        const nl::MetricsReport report = nl::evaluate(handle, dataset.split(split));
        if (as_json) {
          std::cout << Json(report).dump(2) << "\n";
        } else {
          std::cout << nl::format_table(report);
        }
      }
    } else if (suggest->parsed()) {
      nl::Workbench bench(workspace, cli_options());
      std::cout << bench.suggest_o(run_id, parse_targets(targets)).dump(2) << "\n";
    } else if (serve->parsed()) {
      nl::WorkbenchOptions options;
      options.device = nl::device_from_environment();
      nl::Workbench bench(workspace, options);
      std::cout << "listening on http://" << host << ":" << port << "\n" << std::flush;
      nl::serve(bench, host, port, static_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

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

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "neuronlens/counterfactual.hpp"
#include "neuronlens/editor.hpp"
#include "neuronlens/evaluation.hpp"
#include "neuronlens/scenarios.hpp"
#include "neuronlens/serialization.hpp"
#include "neuronlens/visualizer.hpp"

namespace neuronlens {

// Either a dataset directory (see load_dataset) or a scenario to synthesize.
struct DatasetDescriptor {
  std::string path;
  std::optional<ScenarioSpec> scenario;
};

void to_json(Json& j, const DatasetDescriptor& d);
void from_json(const Json& j, DatasetDescriptor& d);

struct RunRequest {
  ModelDescriptor model;
  DatasetDescriptor dataset;
  int class_id = 0;
  std::string mistake_split = "test";
  std::string train_split = "train";
  std::string val_split = "val";
  std::string eval_split = "test";
  CounterfactualConfig counterfactual;
  int k = 5;
  Real core_threshold = 0.03;
  bool flipped_only = true;
};

void to_json(Json& j, const RunRequest& r);
void from_json(const Json& j, RunRequest& r);

// Visualization class mode: "target" (the run's class) or "auto:<k>".
struct VisualizationRequest {
  std::vector<int> neuron_ids;
  std::string class_mode = "target";
  Json spec_overrides = Json::object();  // IllusionSpec fields
};

void to_json(Json& j, const VisualizationRequest& r);
void from_json(const Json& j, VisualizationRequest& r);

struct EditRequest {
  EditPlan plan;
  EditMethod method = EditMethod::kRatio;
};

void to_json(Json& j, const EditRequest& r);
void from_json(const Json& j, EditRequest& r);

enum class JobState { kQueued, kRunning, kSucceeded, kFailed };

std::string_view job_state_name(JobState state);

struct JobStatus {
  std::string job_id;
  std::string kind;  // "run", "visualization", "edit"
  std::string run_id;
  JobState state = JobState::kQueued;
  Json result = nullptr;
  Json error = nullptr;
};

void to_json(Json& j, const JobStatus& s);

// Append-only run manifest. The file is a JSON object whose last member is a
// "stages" array; appending a stage overwrites only the closing trailer, so
// every byte written for earlier stages stays in place.
class ManifestWriter {
 public:
  static void create(const std::filesystem::path& path, const Json& header);
  static void append_stage(const std::filesystem::path& path, const Json& stage);
};

struct WorkbenchOptions {
  std::string device = "cpu";
  bool start_worker = true;  // false: jobs run only through run_pending()
};

// Device named by NEURONLENS_DEVICE, "cpu" when unset. Anything else is
// rejected since only the CPU path exists.
std::string device_from_environment();

class Workbench {
 public:
  explicit Workbench(std::filesystem::path root, WorkbenchOptions options = {});
  ~Workbench();
  Workbench(const Workbench&) = delete;
  Workbench& operator=(const Workbench&) = delete;

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path run_dir(const std::string& run_id) const;

  // Allocates the run directory and queues its pipeline; returns {run, job}.
  std::pair<std::string, std::string> submit_run(const RunRequest& request);
  // Blocking form: submit_run then wait for the job.
  std::string create_run(const RunRequest& request);

  std::string request_visualizations(const std::string& run_id, const VisualizationRequest& request);
  std::string submit_edit(const std::string& run_id, const EditRequest& request);

  JobStatus job(const std::string& job_id) const;
  JobStatus wait(const std::string& job_id) const;
  // Executes queued jobs on the calling thread (for worker-less instances).
  void run_pending();

  std::vector<std::string> list_runs() const;
  Json get_run(const std::string& run_id) const;
  Json get_ranking(const std::string& run_id) const;
  Json get_gallery(const std::string& run_id) const;
  Json get_metrics(const std::string& run_id) const;
  Json suggest_o(const std::string& run_id, const std::vector<EditTarget>& targets) const;

 private:
  struct RunContext;
  struct Job {
    JobStatus status;
    std::function<Json()> work;
  };

  std::string enqueue(const std::string& job_id, const std::string& kind, const std::string& run_id,
                      std::function<Json()> work);
  void worker_loop();
  void execute(const std::string& job_id);

  Json read_manifest(const std::string& run_id) const;
  void append_stage(const std::string& run_id, Json stage);
  std::shared_ptr<RunContext> context(const std::string& run_id) const;
  std::optional<Json> last_stage(const std::string& run_id, const std::string& name) const;
  std::vector<Json> stages(const std::string& run_id, const std::string& name) const;

  Json run_pipeline(const std::string& run_id);
  Json run_visualizations(const std::string& run_id, const std::string& gallery_id,
                          const VisualizationRequest& request);
  Json run_edit(const std::string& run_id, const std::string& edit_id, const EditRequest& request);

  std::filesystem::path root_;
  WorkbenchOptions options_;

  mutable std::shared_mutex manifest_mutex_;
  mutable std::mutex run_mutex_;
  mutable std::map<std::string, std::shared_ptr<RunContext>> contexts_;

  mutable std::mutex job_mutex_;
  mutable std::condition_variable job_cv_;
  std::map<std::string, Job> jobs_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace neuronlens

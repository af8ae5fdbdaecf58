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

#include "neuronlens/workbench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include "neuronlens/errors.hpp"
#include "neuronlens/hashing.hpp"
#include "neuronlens/image_io.hpp"

namespace neuronlens {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kTrailer = "\n]}\n";

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json error_json(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    return {{"code", error_code_name(err->code())}, {"message", err->what()}};
  }
  return {{"code", "Internal"}, {"message", e.what()}};
}

Json stage_entry(const std::string& name, const std::string& status, Json artifacts, Json summary) {
  return {{"stage", name},
          {"status", status},
          {"timestamp", utc_timestamp()},
          {"artifacts", std::move(artifacts)},
          {"summary", std::move(summary)}};
}

// "target" or "auto:<k>"; returns 0 for target mode.
int parse_class_mode(const std::string& mode) {
  if (mode == "target") return 0;
  if (mode.rfind("auto:", 0) == 0) {
    try {
      const int k = std::stoi(mode.substr(5));
      if (k >= 1) return k;
    } catch (const std::exception&) {
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "class mode must be 'target' or 'auto:<k>', got '" + mode + "'");
}

}  // namespace

// --- descriptors -----------------------------------------------------------

void to_json(Json& j, const DatasetDescriptor& d) {
  j = {{"path", d.path}, {"scenario", d.scenario ? Json(*d.scenario) : Json(nullptr)}};
}

void from_json(const Json& j, DatasetDescriptor& d) {
  d.path = j.value("path", std::string());
  if (j.contains("scenario") && !j.at("scenario").is_null()) {
    d.scenario = j.at("scenario").get<ScenarioSpec>();
  } else {
    d.scenario.reset();
  }
}

void to_json(Json& j, const RunRequest& r) {
  j = {{"model", r.model},
       {"dataset", r.dataset},
       {"class_id", r.class_id},
       {"mistake_split", r.mistake_split},
       {"train_split", r.train_split},
       {"val_split", r.val_split},
       {"eval_split", r.eval_split},
       {"counterfactual", r.counterfactual},
       {"k", r.k},
       {"core_threshold", r.core_threshold},
       {"flipped_only", r.flipped_only}};
}

void from_json(const Json& j, RunRequest& r) {
  const RunRequest d;
  r.model = j.at("model").get<ModelDescriptor>();
  r.dataset = j.at("dataset").get<DatasetDescriptor>();
  r.class_id = j.value("class_id", d.class_id);
  r.mistake_split = j.value("mistake_split", d.mistake_split);
  r.train_split = j.value("train_split", d.train_split);
  r.val_split = j.value("val_split", d.val_split);
  r.eval_split = j.value("eval_split", d.eval_split);
  r.counterfactual = j.value("counterfactual", Json::object()).get<CounterfactualConfig>();
  r.k = j.value("k", d.k);
  r.core_threshold = j.value("core_threshold", d.core_threshold);
  r.flipped_only = j.value("flipped_only", d.flipped_only);
}

void to_json(Json& j, const VisualizationRequest& r) {
  j = {{"neuron_ids", r.neuron_ids}, {"class_mode", r.class_mode}, {"spec", r.spec_overrides}};
}

void from_json(const Json& j, VisualizationRequest& r) {
  r.neuron_ids = j.value("neuron_ids", std::vector<int>{});
  r.class_mode = j.value("class_mode", std::string("target"));
  r.spec_overrides = j.value("spec", Json::object());
}

void to_json(Json& j, const EditRequest& r) { j = {{"plan", r.plan}, {"method", method_name(r.method)}}; }

void from_json(const Json& j, EditRequest& r) {
  r.plan = j.value("plan", Json::object()).get<EditPlan>();
  r.method = edit_method_from_name(j.value("method", std::string("ratio")));
}

std::string_view job_state_name(JobState state) {
  switch (state) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kSucceeded: return "succeeded";
    case JobState::kFailed: return "failed";
  }
  return "queued";
}

void to_json(Json& j, const JobStatus& s) {
  j = {{"job_id", s.job_id},
       {"kind", s.kind},
       {"run_id", s.run_id},
       {"state", job_state_name(s.state)},
       {"result", s.result},
       {"error", s.error}};
}

// --- manifest --------------------------------------------------------------

void ManifestWriter::create(const fs::path& path, const Json& header) {
  if (!header.is_object() || header.empty() || header.contains("stages")) {
    throw Error(ErrorCode::kInvalidArgument, "manifest header must be a non-empty object without stages");
  }
  std::string text = header.dump();
  text.pop_back();  // closing brace
  text += ",\"stages\":[";
  text += kTrailer;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot create " + path.string());
  out << text;
}

void ManifestWriter::append_stage(const fs::path& path, const Json& stage) {
  std::fstream file(path, std::ios::binary | std::ios::in | std::ios::out);
  if (!file) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  file.seekg(0, std::ios::end);
  const auto size = static_cast<std::streamoff>(file.tellg());
  const auto trailer = static_cast<std::streamoff>(kTrailer.size());
  if (size < trailer + 1) throw Error(ErrorCode::kIoError, path.string() + " is truncated");
  std::string tail(kTrailer.size() + 1, '\0');
  file.seekg(size - trailer - 1);
  file.read(tail.data(), static_cast<std::streamsize>(tail.size()));
  if (tail.substr(1) != kTrailer) throw Error(ErrorCode::kIoError, path.string() + " has no manifest trailer");
  const bool first = tail.front() == '[';
  file.seekp(size - trailer);
  file << (first ? "\n" : ",\n") << stage.dump() << kTrailer;
  if (!file) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

std::string device_from_environment() {
  const char* value = std::getenv("NEURONLENS_DEVICE");
  const std::string device = value == nullptr || *value == '\0' ? "cpu" : value;
  if (device != "cpu") {
    throw Error(ErrorCode::kInvalidArgument, "device '" + device + "' is not supported; only 'cpu' is available");
  }
  return device;
}

// --- run state ----------------------------------------------------------------

struct Workbench::RunContext {
  RunRequest request;
  ClassifierHandle handle;
  Dataset dataset;

  std::mutex features_mutex;
  std::map<std::string, LabeledFeatures> features;

  const LabeledFeatures& split_features(const std::string& name) {
    std::lock_guard lock(features_mutex);
    auto it = features.find(name);
    if (it == features.end()) {
      it = features.emplace(name, features_for_split(handle, dataset.split(name))).first;
    }
    return it->second;
  }

  const FeatureVector& sample_features(const std::string& split_name, const std::string& sample_id) {
    const LabeledFeatures& f = split_features(split_name);
    const Split& split = dataset.split(split_name);
    for (std::size_t i = 0; i < split.samples.size(); ++i) {
      if (split.samples[i].id == sample_id) return f.features[i];
    }
    throw Error(ErrorCode::kInvalidArgument, "split '" + split_name + "' has no sample '" + sample_id + "'");
  }
};

namespace {

Dataset resolve_dataset(const DatasetDescriptor& d) {
  if (d.scenario) return synth_planted_dataset(*d.scenario);
  if (d.path.empty()) throw Error(ErrorCode::kInvalidArgument, "dataset needs a path or a scenario");
  return load_dataset(d.path);
}

}  // namespace

Workbench::Workbench(fs::path root, WorkbenchOptions options)
    : root_(std::move(root)), options_(std::move(options)) {
  if (options_.device != "cpu") {
    throw Error(ErrorCode::kInvalidArgument, "device '" + options_.device + "' is not supported");
  }
  fs::create_directories(root_ / "runs");
  if (options_.start_worker) worker_ = std::thread([this] { worker_loop(); });
}

Workbench::~Workbench() {
  {
    std::lock_guard lock(job_mutex_);
    stopping_ = true;
  }
  job_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

fs::path Workbench::run_dir(const std::string& run_id) const {
  if (run_id.empty() || run_id.find('/') != std::string::npos || run_id.find("..") != std::string::npos ||
      !fs::exists(root_ / "runs" / run_id / "manifest.json")) {
    throw Error(ErrorCode::kUnknownRun, "no run '" + run_id + "'");
  }
  return root_ / "runs" / run_id;
}

std::vector<std::string> Workbench::list_runs() const {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root_ / "runs")) {
    if (fs::exists(entry.path() / "manifest.json")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

Json Workbench::read_manifest(const std::string& run_id) const {
  const fs::path path = run_dir(run_id) / "manifest.json";
  std::shared_lock lock(manifest_mutex_);
  return read_json(path);
}

void Workbench::append_stage(const std::string& run_id, Json stage) {
  const fs::path path = run_dir(run_id) / "manifest.json";
  std::unique_lock lock(manifest_mutex_);
  ManifestWriter::append_stage(path, stage);
}

std::vector<Json> Workbench::stages(const std::string& run_id, const std::string& name) const {
  std::vector<Json> out;
  const Json manifest = read_manifest(run_id);
  for (const auto& s : manifest.at("stages")) {
    if (s.at("stage") == name) out.push_back(s);
  }
  return out;
}

std::optional<Json> Workbench::last_stage(const std::string& run_id, const std::string& name) const {
  auto all = stages(run_id, name);
  if (all.empty()) return std::nullopt;
  return all.back();
}

std::shared_ptr<Workbench::RunContext> Workbench::context(const std::string& run_id) const {
  std::lock_guard lock(run_mutex_);
  if (auto it = contexts_.find(run_id); it != contexts_.end()) return it->second;
  const Json manifest = read_manifest(run_id);
  RunRequest request = manifest.at("request").get<RunRequest>();
  ClassifierHandle handle = split_classifier(request.model);
  Dataset dataset = resolve_dataset(request.dataset);
  auto ctx = std::shared_ptr<RunContext>(
      new RunContext{std::move(request), std::move(handle), std::move(dataset), {}, {}});
  contexts_[run_id] = ctx;
  return ctx;
}

// --- jobs --------------------------------------------------------------------

std::string Workbench::enqueue(const std::string& job_id, const std::string& kind, const std::string& run_id,
                               std::function<Json()> work) {
  {
    std::lock_guard lock(job_mutex_);
    if (jobs_.count(job_id) != 0) return job_id;
    Job job;
    job.status.job_id = job_id;
    job.status.kind = kind;
    job.status.run_id = run_id;
    job.work = std::move(work);
    jobs_.emplace(job_id, std::move(job));
    queue_.push_back(job_id);
  }
  job_cv_.notify_all();
  return job_id;
}

void Workbench::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(job_mutex_);
      job_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
    }
    execute(id);
  }
}

void Workbench::run_pending() {
  for (;;) {
    std::string id;
    {
      std::lock_guard lock(job_mutex_);
      if (queue_.empty()) return;
      id = queue_.front();
      queue_.pop_front();
    }
    execute(id);
  }
}

void Workbench::execute(const std::string& job_id) {
  std::function<Json()> work;
  std::string kind, run_id;
  {
    std::lock_guard lock(job_mutex_);
    Job& job = jobs_.at(job_id);
    job.status.state = JobState::kRunning;
    work = job.work;
    kind = job.status.kind;
    run_id = job.status.run_id;
  }
  Json result, error;
  bool ok = false;
  try {
    result = work();
    ok = true;
  } catch (const std::exception& e) {
    error = error_json(e);
    try {
      append_stage(run_id, stage_entry(kind, "failed", Json::object(), {{"job_id", job_id}, {"error", error}}));
    } catch (const std::exception&) {
      // The run directory itself is unusable; the job status still reports the error.
    }
  }
  {
    std::lock_guard lock(job_mutex_);
    Job& job = jobs_.at(job_id);
    job.status.state = ok ? JobState::kSucceeded : JobState::kFailed;
    job.status.result = std::move(result);
    job.status.error = std::move(error);
    job.work = nullptr;
  }
  job_cv_.notify_all();
}

JobStatus Workbench::job(const std::string& job_id) const {
  std::lock_guard lock(job_mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(ErrorCode::kUnknownJob, "no job '" + job_id + "'");
  return it->second.status;
}

JobStatus Workbench::wait(const std::string& job_id) const {
  if (!worker_.joinable()) const_cast<Workbench*>(this)->run_pending();
  std::unique_lock lock(job_mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(ErrorCode::kUnknownJob, "no job '" + job_id + "'");
  job_cv_.wait(lock, [&] {
    return it->second.status.state == JobState::kSucceeded || it->second.status.state == JobState::kFailed;
  });
  return it->second.status;
}

// --- runs --------------------------------------------------------------------

std::pair<std::string, std::string> Workbench::submit_run(const RunRequest& request) {
  if (request.k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  if (request.core_threshold < 0.0 || request.core_threshold > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "core threshold must lie in [0, 1]");
  }
  std::string run_id;
  {
    std::lock_guard lock(run_mutex_);
    int next = 1;
    for (const auto& entry : fs::directory_iterator(root_ / "runs")) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("run-", 0) == 0) {
        try {
          next = std::max(next, std::stoi(name.substr(4)) + 1);
        } catch (const std::exception&) {
        }
      }
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "run-%04d", next);
    run_id = buf;
    const Json header = {{"format", "neuronlens-run/1"},
                         {"run_id", run_id},
                         {"created_at", utc_timestamp()},
                         {"device", options_.device},
                         {"model", request.model},
                         {"dataset", request.dataset},
                         {"request", request}};
    ManifestWriter::create(root_ / "runs" / run_id / "manifest.json", header);
  }
  const std::string job_id = enqueue("run-job-" + run_id, "pipeline", run_id,
                                     [this, run_id] { return run_pipeline(run_id); });
  return {run_id, job_id};
}

std::string Workbench::create_run(const RunRequest& request) {
  const auto [run_id, job_id] = submit_run(request);
  wait(job_id);
  return run_id;
}

Json Workbench::run_pipeline(const std::string& run_id) {
  const fs::path dir = run_dir(run_id);
  auto ctx = context(run_id);
  const RunRequest& req = ctx->request;
  const ClassifierHandle& handle = ctx->handle;
  if (req.class_id < 0 || req.class_id >= handle.num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "class id out of range");
  }
  if (static_cast<int>(ctx->dataset.class_names.size()) != handle.num_classes()) {
    throw Error(ErrorCode::kShapeMismatch, "model and dataset disagree on the number of classes");
  }

  append_stage(run_id, stage_entry("model", "ok", Json::object(),
                                   {{"architecture", handle.architecture()},
                                    {"feature_dim", handle.feature_dim()},
                                    {"num_classes", handle.num_classes()},
                                    {"class_names", handle.class_names()},
                                    {"input_spec", handle.input_spec()}}));

  // Mistakes: samples of the target class the model gets wrong.
  const Split& source = ctx->dataset.split(req.mistake_split);
  const LabeledFeatures& source_features = ctx->split_features(req.mistake_split);
  MistakeSet mistakes;
  mistakes.class_id = req.class_id;
  mistakes.source_split = source.name;
  for (std::size_t i = 0; i < source.samples.size(); ++i) {
    if (source.samples[i].label != req.class_id) continue;
    const int predicted = argmax(logits(handle.layer(), source_features.features[i]));
    if (predicted != req.class_id) mistakes.samples.push_back({source.samples[i].id, predicted, req.class_id});
  }
  write_json(mistakes, dir / "mistakes.json");
  save_decision_layer(handle.layer(), dir / "checkpoints" / "decision_layer.v0.json");
  append_stage(run_id, stage_entry("mistakes", mistakes.samples.empty() ? "no_mistakes" : "ok",
                                   {{"mistakes", "mistakes.json"},
                                    {"decision_layer", "checkpoints/decision_layer.v0.json"}},
                                   {{"count", mistakes.samples.size()}, {"split", source.name}}));

  // Baseline metrics on the evaluation and validation splits.
  Json metrics = Json::object();
  for (const std::string& split : {req.eval_split, req.val_split}) {
    if (!ctx->dataset.has_split(split) || metrics.contains(split)) continue;
    const SplitPredictions p = predict_split(handle.layer(), ctx->split_features(split), ctx->dataset.split(split));
    write_json(p, dir / "predictions" / ("v0_" + split + ".json"));
    metrics[split] = evaluate(p, handle.class_names());
  }
  write_json(metrics, dir / "metrics" / "v0.json");
  append_stage(run_id, stage_entry("metrics", "ok", {{"metrics", "metrics/v0.json"}}, {{"version", 0}}));

  if (mistakes.samples.empty()) return {{"run_id", run_id}, {"status", "no_mistakes"}};

  std::vector<OmegaResult> results;
  for (const auto& m : mistakes.samples) {
    results.push_back(optimize_omega(ctx->sample_features(req.mistake_split, m.sample_id), req.class_id,
                                     handle.layer(), req.counterfactual, m.sample_id));
  }
  write_json(results, dir / "omega.json", -1);
  const RankingReport ranking = rank_neurons(results, req.k, req.flipped_only);
  write_json(ranking, dir / "ranking.json");
  const std::vector<int> core = select_core_neurons(ranking, req.core_threshold);
  append_stage(run_id, stage_entry("counterfactual", "ok", {{"omega", "omega.json"}, {"ranking", "ranking.json"}},
                                   {{"flip_rate", ranking.flip_rate},
                                    {"n_samples_used", ranking.n_samples_used},
                                    {"core_neurons", core},
                                    {"core_threshold", req.core_threshold}}));
  return {{"run_id", run_id}, {"status", "ready"}, {"core_neurons", core}};
}

Json Workbench::get_run(const std::string& run_id) const {
  Json manifest = read_manifest(run_id);
  std::string status = "pending";
  for (const auto& s : manifest.at("stages")) {
    const std::string st = s.at("status").get<std::string>();
    if (st == "failed" && s.at("stage") == "pipeline") status = "failed";
    if (status == "failed") continue;
    if (s.at("stage") == "mistakes" && st == "no_mistakes") status = "no_mistakes";
    if (s.at("stage") == "counterfactual" && st == "ok") status = "ready";
  }
  manifest["status"] = status;
  return manifest;
}

Json Workbench::get_ranking(const std::string& run_id) const {
  const fs::path path = run_dir(run_id) / "ranking.json";
  if (!last_stage(run_id, "counterfactual")) {
    throw Error(ErrorCode::kInvalidArgument, "run '" + run_id + "' has no ranking");
  }
  return read_json(path);
}

// --- visualizations ---------------------------------------------------------

std::string Workbench::request_visualizations(const std::string& run_id, const VisualizationRequest& request) {
  run_dir(run_id);
  const auto ranked = last_stage(run_id, "counterfactual");
  if (!ranked) throw Error(ErrorCode::kInvalidArgument, "run '" + run_id + "' has no ranking");
  if (request.neuron_ids.empty()) throw Error(ErrorCode::kInvalidArgument, "no neurons requested");
  parse_class_mode(request.class_mode);
  const int dim = get_ranking(run_id).at("feature_dim").get<int>();
  for (int n : request.neuron_ids) {
    if (n < 0 || n >= dim) throw Error(ErrorCode::kUnknownNeuron, "neuron " + std::to_string(n) + " is not in the run");
  }
  IllusionSpec probe;
  Json merged = probe;
  merged.merge_patch(request.spec_overrides);
  from_json(merged, probe);  // rejects malformed overrides before queueing

  const Json key = {{"run_id", run_id}, {"request", request}};
  const std::string gallery_id = hex64(fnv1a(key.dump()));
  const std::string job_id = "viz-" + gallery_id;
  {
    std::lock_guard lock(job_mutex_);
    if (jobs_.count(job_id) != 0) return job_id;
  }
  for (const auto& s : stages(run_id, "visualizations")) {
    if (s.at("summary").value("gallery_id", std::string()) == gallery_id && s.at("status") == "ok") {
      std::lock_guard lock(job_mutex_);
      Job done;
      done.status = {job_id, "visualizations", run_id, JobState::kSucceeded, s.at("summary"), nullptr};
      jobs_.emplace(job_id, std::move(done));
      return job_id;
    }
  }
  return enqueue(job_id, "visualizations", run_id, [this, run_id, gallery_id, request] {
    return run_visualizations(run_id, gallery_id, request);
  });
}

Json Workbench::run_visualizations(const std::string& run_id, const std::string& gallery_id,
                                   const VisualizationRequest& request) {
  const fs::path dir = run_dir(run_id);
  auto ctx = context(run_id);
  const ClassifierHandle& handle = ctx->handle;
  IllusionSpec base;
  Json merged = base;
  merged.merge_patch(request.spec_overrides);
  from_json(merged, base);
  const auto encoder = make_encoder_pair(base.encoder_pair);
  const int auto_k = parse_class_mode(request.class_mode);

  const fs::path rel_root = fs::path("gallery") / gallery_id;
  Json entries = Json::array();
  for (int neuron : request.neuron_ids) {
    const std::vector<int> classes =
        auto_k == 0 ? std::vector<int>{ctx->request.class_id}
                    : top_classes_for_neuron(handle.layer(), neuron, std::min(auto_k, handle.num_classes()));
    for (int c : classes) {
      IllusionSpec spec = base;
      spec.neuron_id = neuron;
      spec.class_id = c;
      const IllusionResult r = generate_illusion(handle, spec, *encoder);
      const fs::path stem = rel_root / std::to_string(neuron) / std::to_string(c);
      fs::create_directories(dir / stem.parent_path());
      write_png(r.image, dir / (stem.string() + ".png"));
      write_png(r.masked_image, dir / (stem.string() + "_masked.png"));
      write_json(r, dir / (stem.string() + ".json"));
      entries.push_back({{"neuron_id", neuron},
                         {"class_id", c},
                         {"class_name", handle.class_names()[static_cast<std::size_t>(c)]},
                         {"activation", r.activation},
                         {"class_logit", r.class_logit},
                         {"clip_alignment", r.clip_alignment},
                         {"mask_degenerate", r.mask_degenerate},
                         {"image", stem.string() + ".png"},
                         {"masked_image", stem.string() + "_masked.png"},
                         {"trace", stem.string() + ".json"}});
    }
  }
  const Json index = {{"gallery_id", gallery_id}, {"request", request}, {"entries", entries}};
  write_json(index, dir / rel_root / "index.json");
  const Json summary = {{"gallery_id", gallery_id}, {"images", entries.size()}};
  append_stage(run_id, stage_entry("visualizations", "ok", {{"gallery", (rel_root / "index.json").string()}}, summary));
  return summary;
}

Json Workbench::get_gallery(const std::string& run_id) const {
  const fs::path dir = run_dir(run_id);
  Json galleries = Json::array();
  for (const auto& s : stages(run_id, "visualizations")) {
    if (s.at("status") != "ok") continue;
    galleries.push_back(read_json(dir / s.at("artifacts").at("gallery").get<std::string>()));
  }
  return {{"run_id", run_id}, {"galleries", std::move(galleries)}};
}

// --- edits -------------------------------------------------------------------

std::string Workbench::submit_edit(const std::string& run_id, const EditRequest& request) {
  run_dir(run_id);
  auto ctx = context(run_id);
  validate(request.plan, request.method, ctx->handle.num_classes(), ctx->handle.feature_dim());
  if (!ctx->dataset.has_split(ctx->request.train_split)) {
    throw Error(ErrorCode::kEmptySplit, "dataset has no split '" + ctx->request.train_split + "'");
  }
  const Json key = {{"run_id", run_id}, {"edit", request}};
  const std::string edit_id = hex64(fnv1a(key.dump()));
  return enqueue("edit-" + edit_id, "edit", run_id,
                 [this, run_id, edit_id, request] { return run_edit(run_id, edit_id, request); });
}

Json Workbench::run_edit(const std::string& run_id, const std::string& edit_id, const EditRequest& request) {
  const fs::path dir = run_dir(run_id);
  auto ctx = context(run_id);
  const RunRequest& req = ctx->request;
  const ClassifierHandle& handle = ctx->handle;
  const int version = static_cast<int>(stages(run_id, "edit").size()) + 1;
  const std::string v = "v" + std::to_string(version);

  const LabeledFeatures& train = ctx->split_features(req.train_split);
  const LabeledFeatures& val =
      ctx->dataset.has_split(req.val_split) ? ctx->split_features(req.val_split) : train;
  const std::uint64_t checksum_before = parameter_checksum(handle.backbone());
  EditOutcome outcome = train_decision_layer(handle.layer(), train, val, request.plan, request.method);
  outcome.extractor_checksum_before = checksum_before;
  outcome.extractor_checksum_after = parameter_checksum(handle.backbone());

  const std::string layer_rel = "checkpoints/decision_layer." + v + ".json";
  save_decision_layer(outcome.edited_layer, dir / layer_rel);
  const std::string outcome_rel = "edits/" + v + "/outcome.json";
  Json outcome_json = outcome;
  outcome_json["edit_id"] = edit_id;
  outcome_json["decision_layer"] = layer_rel;
  write_json(outcome_json, dir / outcome_rel);

  Json metrics = Json::object();
  for (const std::string& split : {req.eval_split, req.val_split}) {
    if (!ctx->dataset.has_split(split) || metrics.contains(split)) continue;
    const SplitPredictions p =
        predict_split(outcome.edited_layer, ctx->split_features(split), ctx->dataset.split(split));
    write_json(p, dir / "predictions" / (v + "_" + split + ".json"));
    metrics[split] = evaluate(p, handle.class_names());
  }
  const std::string metrics_rel = "metrics/" + v + ".json";
  write_json(metrics, dir / metrics_rel);

  // Ranking of the same mistake samples under the edited layer.
  Json artifacts = {{"outcome", outcome_rel}, {"decision_layer", layer_rel}, {"metrics", metrics_rel}};
  std::optional<RankingReport> ranking_before, ranking_after;
  if (last_stage(run_id, "counterfactual")) {
    ranking_before = read_json(dir / "ranking.json").get<RankingReport>();
    const MistakeSet mistakes = read_json(dir / "mistakes.json").get<MistakeSet>();
    std::vector<OmegaResult> results;
    for (const auto& m : mistakes.samples) {
      results.push_back(optimize_omega(ctx->sample_features(req.mistake_split, m.sample_id), req.class_id,
                                       outcome.edited_layer, req.counterfactual, m.sample_id));
    }
    try {
      ranking_after = rank_neurons(results, req.k, req.flipped_only);
      const std::string ranking_rel = "edits/" + v + "/ranking.json";
      write_json(*ranking_after, dir / ranking_rel);
      artifacts["ranking"] = ranking_rel;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyMistakeSet) throw;
    }
  }

  std::vector<int> target_neurons;
  for (const auto& t : request.plan.targets) target_neurons.push_back(t.neuron_id);
  const Json original = read_json(dir / "metrics" / "v0.json");
  if (original.contains(req.eval_split) && metrics.contains(req.eval_split)) {
    EvaluationSnapshot before{req.eval_split, original.at(req.eval_split).get<MetricsReport>(), ranking_before,
                              target_neurons, 3};
    EvaluationSnapshot after{req.eval_split, metrics.at(req.eval_split).get<MetricsReport>(),
                             ranking_after ? ranking_after : std::optional<RankingReport>(RankingReport{}),
                             target_neurons, 3};
    if (!ranking_before) after.ranking.reset();
    const DeltaReport delta = compare_edits(before, after);
    const std::string delta_rel = "edits/" + v + "/delta.json";
    write_json(delta, dir / delta_rel);
    artifacts["delta"] = delta_rel;
  }

  const Json summary = {{"edit_id", edit_id},
                        {"version", version},
                        {"method", method_name(request.method)},
                        {"best_epoch", outcome.best_epoch},
                        {"val_accuracy_before", outcome.val_accuracy_before},
                        {"val_accuracy_after", outcome.val_accuracy_after}};
  append_stage(run_id, stage_entry("edit", "ok", artifacts, summary));
  return summary;
}

Json Workbench::get_metrics(const std::string& run_id) const {
  const fs::path dir = run_dir(run_id);
  if (!last_stage(run_id, "metrics")) throw Error(ErrorCode::kInvalidArgument, "run '" + run_id + "' has no metrics yet");
  Json edits = Json::array();
  for (const auto& s : stages(run_id, "edit")) {
    if (s.at("status") != "ok") continue;
    const Json& a = s.at("artifacts");
    edits.push_back({{"version", s.at("summary").at("version")},
                     {"edit_id", s.at("summary").at("edit_id")},
                     {"method", s.at("summary").at("method")},
                     {"metrics", read_json(dir / a.at("metrics").get<std::string>())},
                     {"delta", a.contains("delta") ? read_json(dir / a.at("delta").get<std::string>()) : Json(nullptr)}});
  }
  return {{"run_id", run_id}, {"original", read_json(dir / "metrics" / "v0.json")}, {"edits", std::move(edits)}};
}

Json Workbench::suggest_o(const std::string& run_id, const std::vector<EditTarget>& targets) const {
  const fs::path dir = run_dir(run_id);
  const auto ranked = last_stage(run_id, "counterfactual");
  if (!ranked) throw Error(ErrorCode::kInvalidArgument, "run '" + run_id + "' has no ranking");
  auto ctx = context(run_id);
  std::vector<EditTarget> chosen = targets;
  if (chosen.empty()) {
    for (int n : ranked->at("summary").at("core_neurons").get<std::vector<int>>()) {
      chosen.push_back({ctx->request.class_id, n});
    }
  }
  if (chosen.empty()) throw Error(ErrorCode::kInvalidArgument, "no targets given and the run has no core neurons");
  for (const auto& t : chosen) {
    if (t.neuron_id < 0 || t.neuron_id >= ctx->handle.feature_dim()) {
      throw Error(ErrorCode::kUnknownNeuron, "neuron " + std::to_string(t.neuron_id) + " is not in the run");
    }
    if (t.class_id < 0 || t.class_id >= ctx->handle.num_classes()) {
      throw Error(ErrorCode::kInvalidArgument, "class id out of range");
    }
  }
  const MistakeSet mistakes = read_json(dir / "mistakes.json").get<MistakeSet>();
  std::vector<FeatureVector> features;
  for (const auto& m : mistakes.samples) features.push_back(ctx->sample_features(mistakes.source_split, m.sample_id));
  const FeatureVector mean = mean_feature(features);
  Json ratios = Json::array();
  for (const auto& t : chosen) {
    ratios.push_back(probability_ratio(ctx->handle.layer(), mean, t.class_id, t.neuron_id));
  }
  return {{"run_id", run_id},
          {"o", neuronlens::suggest_o(ctx->handle.layer(), mean, chosen)},
          {"targets", chosen},
          {"ratios", std::move(ratios)}};
}

}  // namespace neuronlens

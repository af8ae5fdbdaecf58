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

#include "neuronlens/serialization.hpp"

#include <fstream>

#include "neuronlens/errors.hpp"

namespace neuronlens {

Json vector_to_json(const Vector<Real>& v) {
  return Json(std::vector<Real>(v.data(), v.data() + v.size()));
}

Vector<Real> vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<Real>>();
  return Eigen::Map<const Vector<Real>>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void to_json(Json& j, const OmegaResult& r) {
  j = {{"sample_id", r.sample_id},
       {"target_class", r.target_class},
       {"flipped", r.flipped},
       {"steps_used", r.steps_used},
       {"final_loss", r.final_loss},
       {"omega", vector_to_json(r.omega)},
       {"loss_trace", r.loss_trace}};
}

void from_json(const Json& j, OmegaResult& r) {
  r.sample_id = j.at("sample_id").get<std::string>();
  r.target_class = j.at("target_class").get<int>();
  r.flipped = j.at("flipped").get<bool>();
  r.steps_used = j.at("steps_used").get<int>();
  r.final_loss = j.at("final_loss").get<Real>();
  r.omega = vector_from_json(j.at("omega"));
  r.loss_trace = j.value("loss_trace", std::vector<Real>{});
}

void to_json(Json& j, const RankingReport& r) {
  Json rates = Json::object();
  Json signed_omega = Json::object();
  Json categories = Json::object();
  for (int n = 0; n < r.feature_dim(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (r.rank_rate[i] <= 0.0) continue;
    const std::string key = std::to_string(n);
    rates[key] = r.rank_rate[i];
    signed_omega[key] = r.mean_signed_omega[i];
    categories[key] = category_name(r.category[i]);
  }
  j = {{"k", r.k},
       {"feature_dim", r.feature_dim()},
       {"n_samples_used", r.n_samples_used},
       {"n_samples_total", r.n_samples_total},
       {"flip_rate", r.flip_rate},
       {"rank_rate", std::move(rates)},
       {"mean_signed_omega", std::move(signed_omega)},
       {"category", std::move(categories)},
       {"sample_ids", r.sample_ids},
       {"per_sample_top", r.per_sample_top}};
}

namespace {

NeuronCategory category_from_name(const std::string& name) {
  if (name == "excessive") return NeuronCategory::kExcessive;
  if (name == "insufficient") return NeuronCategory::kInsufficient;
  if (name == "mixed") return NeuronCategory::kMixed;
  throw Error(ErrorCode::kInvalidArgument, "unknown neuron category '" + name + "'");
}

}  // namespace

void from_json(const Json& j, RankingReport& r) {
  const int dim = j.at("feature_dim").get<int>();
  r.k = j.at("k").get<int>();
  r.n_samples_used = j.at("n_samples_used").get<int>();
  r.n_samples_total = j.at("n_samples_total").get<int>();
  r.flip_rate = j.at("flip_rate").get<Real>();
  r.rank_rate.assign(static_cast<std::size_t>(dim), 0.0);
  r.mean_signed_omega.assign(static_cast<std::size_t>(dim), 0.0);
  r.category.assign(static_cast<std::size_t>(dim), NeuronCategory::kMixed);
  for (const auto& [key, value] : j.at("rank_rate").items()) {
    const int n = std::stoi(key);
    if (n < 0 || n >= dim) throw Error(ErrorCode::kNeuronOutOfRange, "rank map key " + key);
    const auto i = static_cast<std::size_t>(n);
    r.rank_rate[i] = value.get<Real>();
    r.mean_signed_omega[i] = j.at("mean_signed_omega").at(key).get<Real>();
    r.category[i] = category_from_name(j.at("category").at(key).get<std::string>());
  }
  r.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
  r.per_sample_top = j.at("per_sample_top").get<std::vector<std::vector<int>>>();
}

void to_json(Json& j, const MistakeSet& m) {
  Json samples = Json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"sample_id", s.sample_id}, {"predicted_class", s.predicted_class},
                       {"true_class", s.true_class}});
  }
  j = {{"class_id", m.class_id}, {"source_split", m.source_split}, {"samples", std::move(samples)}};
}

void from_json(const Json& j, MistakeSet& m) {
  m.class_id = j.at("class_id").get<int>();
  m.source_split = j.at("source_split").get<std::string>();
  m.samples.clear();
  for (const auto& s : j.at("samples")) {
    m.samples.push_back({s.at("sample_id").get<std::string>(), s.at("predicted_class").get<int>(),
                         s.at("true_class").get<int>()});
  }
}

void to_json(Json& j, const CounterfactualConfig& c) {
  j = {{"lambda1", c.lambda1},       {"lambda2", c.lambda2},   {"max_steps", c.max_steps},
       {"step_size", c.step_size},   {"proximal", c.proximal}, {"tolerance", c.tolerance}};
}

void from_json(const Json& j, CounterfactualConfig& c) {
  const CounterfactualConfig d;
  c.lambda1 = j.value("lambda1", d.lambda1);
  c.lambda2 = j.value("lambda2", d.lambda2);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.step_size = j.value("step_size", d.step_size);
  c.proximal = j.value("proximal", d.proximal);
  c.tolerance = j.value("tolerance", d.tolerance);
}

void to_json(Json& j, const EditTarget& t) { j = {{"class_id", t.class_id}, {"neuron_id", t.neuron_id}}; }

void from_json(const Json& j, EditTarget& t) {
  t.class_id = j.at("class_id").get<int>();
  t.neuron_id = j.at("neuron_id").get<int>();
}

std::string_view schedule_name(Schedule schedule) {
  switch (schedule) {
    case Schedule::kConstant: return "constant";
    case Schedule::kCosine: return "cosine";
    case Schedule::kWarmupCosine: return "warmup_cosine";
  }
  return "cosine";
}

Schedule schedule_from_name(const std::string& name) {
  if (name == "constant") return Schedule::kConstant;
  if (name == "cosine") return Schedule::kCosine;
  if (name == "warmup_cosine") return Schedule::kWarmupCosine;
  throw Error(ErrorCode::kInvalidArgument, "unknown schedule '" + name + "'");
}

std::string_view checkpoint_rule_name(CheckpointRule rule) {
  return rule == CheckpointRule::kMinClassAccuracy ? "min_class_accuracy" : "best_validation";
}

CheckpointRule checkpoint_rule_from_name(const std::string& name) {
  if (name == "best_validation") return CheckpointRule::kBestValidation;
  if (name == "min_class_accuracy") return CheckpointRule::kMinClassAccuracy;
  throw Error(ErrorCode::kInvalidArgument, "unknown checkpoint rule '" + name + "'");
}

EditMethod edit_method_from_name(const std::string& name) {
  for (EditMethod m : {EditMethod::kRatio, EditMethod::kCoefficient, EditMethod::kNone}) {
    if (method_name(m) == name) return m;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown edit method '" + name + "'");
}

void to_json(Json& j, const EditPlan& p) {
  j = {{"targets", p.targets},
       {"o", p.o},
       {"lambda3", p.lambda3},
       {"epochs", p.epochs},
       {"learning_rate", p.learning_rate},
       {"batch_size", p.batch_size},
       {"schedule", schedule_name(p.schedule)},
       {"warmup_epochs", p.warmup_epochs},
       {"weight_decay", p.weight_decay},
       {"patience", p.patience},
       {"checkpoint_rule", checkpoint_rule_name(p.checkpoint_rule)},
       {"seed", p.seed}};
}

void from_json(const Json& j, EditPlan& p) {
  const EditPlan d;
  p.targets = j.value("targets", std::vector<EditTarget>{});
  p.o = j.value("o", d.o);
  p.lambda3 = j.value("lambda3", d.lambda3);
  p.epochs = j.value("epochs", d.epochs);
  p.learning_rate = j.value("learning_rate", d.learning_rate);
  p.batch_size = j.value("batch_size", d.batch_size);
  p.schedule = schedule_from_name(j.value("schedule", std::string(schedule_name(d.schedule))));
  p.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  p.weight_decay = j.value("weight_decay", d.weight_decay);
  p.patience = j.value("patience", d.patience);
  p.checkpoint_rule = checkpoint_rule_from_name(
      j.value("checkpoint_rule", std::string(checkpoint_rule_name(d.checkpoint_rule))));
  p.seed = j.value("seed", d.seed);
}

void to_json(Json& j, const EditOutcome& o) {
  Json history = Json::array();
  for (const auto& e : o.history) {
    history.push_back({{"epoch", e.epoch},
                       {"learning_rate", e.learning_rate},
                       {"train_cross_entropy", e.train_cross_entropy},
                       {"regularizer", e.regularizer},
                       {"val_accuracy", e.val_accuracy},
                       {"val_min_class_accuracy", e.val_min_class_accuracy}});
  }
  j = {{"method", method_name(o.method)},
       {"plan", o.plan},
       {"history", std::move(history)},
       {"best_epoch", o.best_epoch},
       {"initial_train_cross_entropy", o.initial_train_cross_entropy},
       {"val_accuracy_before", o.val_accuracy_before},
       {"val_accuracy_after", o.val_accuracy_after},
       {"extractor_checksum_before", o.extractor_checksum_before},
       {"extractor_checksum_after", o.extractor_checksum_after}};
}

void to_json(Json& j, const RatioReport& r) {
  j = {{"class_id", r.class_id},
       {"neuron_id", r.neuron_id},
       {"ratio", r.ratio},
       {"direct_ratio", r.direct_ratio},
       {"substitution_terms", vector_to_json(r.substitution_terms)}};
}

namespace {

Json int_map(const std::map<int, Real>& m) {
  Json out = Json::object();
  for (const auto& [k, v] : m) out[std::to_string(k)] = v;
  return out;
}

std::map<int, Real> int_map_from(const Json& j) {
  std::map<int, Real> out;
  for (const auto& [k, v] : j.items()) out[std::stoi(k)] = v.get<Real>();
  return out;
}

}  // namespace

void to_json(Json& j, const MetricsReport& m) {
  j = {{"split", m.split_name},
       {"split_fingerprint", m.split_fingerprint},
       {"n_samples", m.n_samples},
       {"n_correct", m.n_correct},
       {"avg_acc", m.avg_acc},
       {"per_class_acc", int_map(m.per_class_acc)},
       {"worst_class", {{"id", m.worst_class.first}, {"acc", m.worst_class.second}}},
       {"per_group_acc", int_map(m.per_group_acc)},
       {"worst_group", m.worst_group ? Json{{"id", m.worst_group->first}, {"acc", m.worst_group->second}}
                                     : Json(nullptr)},
       {"class_names", m.class_names}};
}

void from_json(const Json& j, MetricsReport& m) {
  m.split_name = j.at("split").get<std::string>();
  m.split_fingerprint = j.at("split_fingerprint").get<std::uint64_t>();
  m.n_samples = j.at("n_samples").get<int>();
  m.n_correct = j.at("n_correct").get<int>();
  m.avg_acc = j.at("avg_acc").get<Real>();
  m.per_class_acc = int_map_from(j.at("per_class_acc"));
  m.worst_class = {j.at("worst_class").at("id").get<int>(), j.at("worst_class").at("acc").get<Real>()};
  m.per_group_acc = int_map_from(j.at("per_group_acc"));
  if (j.at("worst_group").is_null()) {
    m.worst_group.reset();
  } else {
    m.worst_group = std::pair{j.at("worst_group").at("id").get<int>(),
                              j.at("worst_group").at("acc").get<Real>()};
  }
  m.class_names = j.value("class_names", std::vector<std::string>{});
}

void to_json(Json& j, const SplitPredictions& p) {
  j = {{"split", p.split_name},
       {"sample_ids", p.sample_ids},
       {"labels", p.labels},
       {"groups", p.groups},
       {"predicted", p.predicted}};
}

void from_json(const Json& j, SplitPredictions& p) {
  p.split_name = j.at("split").get<std::string>();
  p.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
  p.labels = j.at("labels").get<std::vector<int>>();
  p.groups = j.at("groups").get<std::vector<int>>();
  p.predicted = j.at("predicted").get<std::vector<int>>();
}

namespace {

Json optional_real(const std::optional<Real>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

void to_json(Json& j, const DeltaReport& d) {
  Json rows = Json::array();
  for (const auto& r : d.rows) {
    rows.push_back({{"scenario", r.scenario},
                    {"acc_before", r.acc_before},
                    {"acc_after", r.acc_after},
                    {"delta_acc", r.delta_acc},
                    {"worst_class_before", r.worst_class_before},
                    {"worst_class_after", r.worst_class_after},
                    {"delta_worst_class", r.delta_worst_class},
                    {"prec_before", optional_real(r.prec_before)},
                    {"prec_after", optional_real(r.prec_after)},
                    {"delta_prec_at_k", optional_real(r.delta_prec_at_k)}});
  }
  j = {{"k", d.k},
       {"delta_acc", d.delta_acc},
       {"delta_prec_at_k", optional_real(d.delta_prec_at_k)},
       {"rows", std::move(rows)}};
}

namespace {

std::optional<Real> optional_real_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<Real>();
}

}  // namespace

void from_json(const Json& j, DeltaReport& d) {
  d.k = j.at("k").get<int>();
  d.delta_acc = j.at("delta_acc").get<Real>();
  d.delta_prec_at_k = optional_real_from(j.at("delta_prec_at_k"));
  d.rows.clear();
  for (const auto& r : j.at("rows")) {
    DeltaRow row;
    row.scenario = r.at("scenario").get<std::string>();
    row.acc_before = r.at("acc_before").get<Real>();
    row.acc_after = r.at("acc_after").get<Real>();
    row.delta_acc = r.at("delta_acc").get<Real>();
    row.worst_class_before = r.at("worst_class_before").get<Real>();
    row.worst_class_after = r.at("worst_class_after").get<Real>();
    row.delta_worst_class = r.at("delta_worst_class").get<Real>();
    row.prec_before = optional_real_from(r.at("prec_before"));
    row.prec_after = optional_real_from(r.at("prec_after"));
    row.delta_prec_at_k = optional_real_from(r.at("delta_prec_at_k"));
    d.rows.push_back(std::move(row));
  }
}

void to_json(Json& j, const IllusionSpec& s) {
  j = {{"neuron_id", s.neuron_id},
       {"class_id", s.class_id ? Json(*s.class_id) : Json(nullptr)},
       {"auto_classes", s.auto_classes},
       {"gamma", s.gamma},
       {"epsilon", s.epsilon},
       {"steps", s.steps},
       {"learning_rate", s.learning_rate},
       {"weight_decay", s.weight_decay},
       {"init_stddev", s.init_stddev},
       {"seed", s.seed},
       {"encoder_pair", s.encoder_pair},
       {"prompt_templates", s.prompt_templates},
       {"augment",
        {{"max_angle_degrees", s.augment.max_angle_degrees},
         {"max_shift", s.augment.max_shift},
         {"min_scale", s.augment.min_scale},
         {"max_scale", s.augment.max_scale},
         {"blur_sigma", s.augment.blur_sigma}}},
       {"mask_threshold", s.mask_threshold},
       {"mask_brightness", s.mask_brightness}};
}

void from_json(const Json& j, IllusionSpec& s) {
  const IllusionSpec d;
  s.neuron_id = j.value("neuron_id", d.neuron_id);
  if (j.contains("class_id") && !j.at("class_id").is_null()) {
    s.class_id = j.at("class_id").get<int>();
  } else {
    s.class_id.reset();
  }
  s.auto_classes = j.value("auto_classes", d.auto_classes);
  s.gamma = j.value("gamma", d.gamma);
  s.epsilon = j.value("epsilon", d.epsilon);
  s.steps = j.value("steps", d.steps);
  s.learning_rate = j.value("learning_rate", d.learning_rate);
  s.weight_decay = j.value("weight_decay", d.weight_decay);
  s.init_stddev = j.value("init_stddev", d.init_stddev);
  s.seed = j.value("seed", d.seed);
  s.encoder_pair = j.value("encoder_pair", d.encoder_pair);
  s.prompt_templates = j.value("prompt_templates", d.prompt_templates);
  if (j.contains("augment")) {
    const Json& a = j.at("augment");
    s.augment.max_angle_degrees = a.value("max_angle_degrees", d.augment.max_angle_degrees);
    s.augment.max_shift = a.value("max_shift", d.augment.max_shift);
    s.augment.min_scale = a.value("min_scale", d.augment.min_scale);
    s.augment.max_scale = a.value("max_scale", d.augment.max_scale);
    s.augment.blur_sigma = a.value("blur_sigma", d.augment.blur_sigma);
  }
  s.mask_threshold = j.value("mask_threshold", d.mask_threshold);
  s.mask_brightness = j.value("mask_brightness", d.mask_brightness);
}

void to_json(Json& j, const IllusionResult& r) {
  Json trace = Json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"loss", t.loss}, {"activation", t.activation}, {"class_logit", t.class_logit},
                     {"alignment", t.alignment}});
  }
  j = {{"neuron_id", r.spec.neuron_id},
       {"class_id", r.class_id},
       {"activation", r.activation},
       {"class_logit", r.class_logit},
       {"clip_alignment", r.clip_alignment},
       {"mask_degenerate", r.mask_degenerate},
       {"spec", r.spec},
       {"trace", std::move(trace)}};
}

void to_json(Json& j, const ModelDescriptor& d) {
  j = {{"name", d.name}, {"weights_path", d.weights_path}, {"num_classes", d.num_classes}, {"seed", d.seed}};
}

void from_json(const Json& j, ModelDescriptor& d) {
  const ModelDescriptor def;
  d.name = j.value("name", def.name);
  d.weights_path = j.value("weights_path", def.weights_path);
  d.num_classes = j.value("num_classes", def.num_classes);
  d.seed = j.value("seed", def.seed);
}

void to_json(Json& j, const InputSpec& s) {
  j = {{"height", s.height}, {"width", s.width}, {"channels", s.channels}, {"mean", s.mean}, {"stddev", s.stddev}};
}

void to_json(Json& j, const ScenarioSpec& s) {
  j = {{"base_classes", s.base_classes},
       {"confounded_class", s.confounded_class},
       {"confound_attribute", s.confound_attribute},
       {"train_confound_rate", s.train_confound_rate},
       {"test_confound_rate", s.test_confound_rate},
       {"train_per_class", s.train_per_class},
       {"val_per_class", s.val_per_class},
       {"test_per_class", s.test_per_class},
       {"seed", s.seed},
       {"image_size", s.image_size},
       {"pixel_noise", s.pixel_noise}};
}

void from_json(const Json& j, ScenarioSpec& s) {
  const ScenarioSpec d;
  s.base_classes = j.value("base_classes", d.base_classes);
  s.confounded_class = j.value("confounded_class", d.confounded_class);
  s.confound_attribute = j.value("confound_attribute", d.confound_attribute);
  s.train_confound_rate = j.value("train_confound_rate", d.train_confound_rate);
  s.test_confound_rate = j.value("test_confound_rate", d.test_confound_rate);
  s.train_per_class = j.value("train_per_class", d.train_per_class);
  s.val_per_class = j.value("val_per_class", d.val_per_class);
  s.test_per_class = j.value("test_per_class", d.test_per_class);
  s.seed = j.value("seed", d.seed);
  s.image_size = j.value("image_size", d.image_size);
  s.pixel_noise = j.value("pixel_noise", d.pixel_noise);
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kIoError, path.string() + ": " + e.what());
  }
}

void write_json(const Json& j, const std::filesystem::path& path, int indent) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out << j.dump(indent) << '\n';
    if (!out) throw Error(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace neuronlens

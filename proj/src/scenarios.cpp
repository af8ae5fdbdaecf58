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

#include "neuronlens/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "neuronlens/hashing.hpp"
#include "neuronlens/image_io.hpp"
#include "neuronlens/serialization.hpp"

namespace neuronlens {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(base ^ 0x5bd1e995ULL) + a) + b * 0x100000001b3ULL + c);
}

struct Rgb {
  Real r, g, b;
};

Rgb confound_color(const std::string& attribute) {
  if (attribute == "magenta_patch") return {0.95, 0.10, 0.85};
  if (attribute == "cyan_patch") return {0.10, 0.90, 0.95};
  if (attribute == "yellow_patch") return {0.95, 0.90, 0.10};
  if (attribute == "orange_patch") return {0.95, 0.50, 0.05};
  throw Error(ErrorCode::kInvalidArgument, "unknown confound attribute '" + attribute + "'");
}

enum class Shape { kDisk, kRing, kSquare, kFrame, kTriangle, kCross };

Shape parse_shape(const std::string& shape) {
  if (shape == "disk") return Shape::kDisk;
  if (shape == "ring") return Shape::kRing;
  if (shape == "square") return Shape::kSquare;
  if (shape == "frame") return Shape::kFrame;
  if (shape == "triangle") return Shape::kTriangle;
  if (shape == "cross") return Shape::kCross;
  throw Error(ErrorCode::kInvalidArgument, "unknown shape '" + shape + "'");
}

bool inside_shape(Shape shape, Real dx, Real dy, Real r) {
  const Real half = 0.85 * r;
  const Real box = std::max(std::abs(dx), std::abs(dy));
  switch (shape) {
    case Shape::kDisk: return std::hypot(dx, dy) <= r;
    case Shape::kRing: {
      const Real d = std::hypot(dx, dy);
      return d <= r && d >= r - 5.0;
    }
    case Shape::kSquare: return box <= half;
    case Shape::kFrame: return box <= half && box >= half - 4.5;
    case Shape::kCross: {
      const Real arm = r / 3.0;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
    case Shape::kTriangle: {
      // Apex up at (0, -r), base corners at (+-0.95 r, 0.75 r).
      const Real ax = 0.0, ay = -r, bx = -0.95 * r, by = 0.75 * r, cx = 0.95 * r, cy = 0.75 * r;
      auto side = [](Real px, Real py, Real x1, Real y1, Real x2, Real y2) {
        return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
      };
      const Real s1 = side(dx, dy, ax, ay, bx, by);
      const Real s2 = side(dx, dy, bx, by, cx, cy);
      const Real s3 = side(dx, dy, cx, cy, ax, ay);
      return (s1 <= 0 && s2 <= 0 && s3 <= 0) || (s1 >= 0 && s2 >= 0 && s3 >= 0);
    }
  }
  return false;
}

void validate(const ScenarioSpec& spec) {
  auto rate_ok = [](Real r) { return r >= 0.0 && r <= 1.0; };
  if (!rate_ok(spec.train_confound_rate) || !rate_ok(spec.test_confound_rate)) {
    throw Error(ErrorCode::kInvalidArgument, "confound rates must lie in [0, 1]");
  }
  if (spec.train_per_class <= 0 || spec.val_per_class <= 0 || spec.test_per_class <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "sample counts must be positive");
  }
  if (spec.base_classes.empty() || spec.confounded_class < 0 ||
      spec.confounded_class >= static_cast<int>(spec.base_classes.size())) {
    throw Error(ErrorCode::kInvalidArgument, "confounded class out of range");
  }
  confound_color(spec.confound_attribute);
}

}  // namespace

const Split& Dataset::split(const std::string& name) const {
  for (const auto& s : splits) {
    if (s.name == name) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "dataset has no split '" + name + "'");
}

bool Dataset::has_split(const std::string& name) const {
  return std::any_of(splits.begin(), splits.end(), [&](const Split& s) { return s.name == name; });
}

std::vector<std::string> known_shapes() {
  return {"disk", "ring", "square", "frame", "triangle", "cross"};
}

std::vector<std::string> known_confound_attributes() {
  return {"magenta_patch", "cyan_patch", "yellow_patch", "orange_patch"};
}

Image<Real> render_shape_image(const std::string& shape, const std::string& confound,
                               std::uint64_t seed, int size, Real pixel_noise) {
  const Shape kind = parse_shape(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  auto uniform = [&](Real lo, Real hi) { return lo + (hi - lo) * unit(rng); };

  const Real background = uniform(0.15, 0.45);
  const Rgb bg_tint{uniform(-0.05, 0.05), uniform(-0.05, 0.05), uniform(-0.05, 0.05)};
  const Real slope_x = uniform(-0.1, 0.1);
  const Real slope_y = uniform(-0.1, 0.1);
  const Real foreground = background + uniform(0.3, 0.45);
  const Rgb fg_tint{uniform(-0.05, 0.05), uniform(-0.05, 0.05), uniform(-0.05, 0.05)};

  const Real scale = size / 64.0;
  const Real cx = uniform(22.0, 42.0) * scale;
  const Real cy = uniform(22.0, 42.0) * scale;
  const Real radius = uniform(10.0, 15.0) * scale;
  const Real angle = uniform(-0.4, 0.4);
  const Real ca = std::cos(angle), sa = std::sin(angle);
  const int corner = static_cast<int>(unit(rng) * 4.0) % 4;
  std::normal_distribution<Real> noise(0.0, 1.0);

  Image<Real> image = Image<Real>::zeros(3, size, size);
  const Real base[3] = {bg_tint.r, bg_tint.g, bg_tint.b};
  const Real fg_offset[3] = {fg_tint.r, fg_tint.g, fg_tint.b};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      // 4x4 supersampled coverage for soft edges.
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
          const Real px = x + (sx + 0.5) / 4.0 - cx;
          const Real py = y + (sy + 0.5) / 4.0 - cy;
          const Real rx = ca * px + sa * py;
          const Real ry = -sa * px + ca * py;
          if (inside_shape(kind, rx / scale, ry / scale, radius / scale)) ++hits;
        }
      }
      const Real coverage = hits / 16.0;
      const Real bg = background + slope_x * (x / static_cast<Real>(size) - 0.5) +
                      slope_y * (y / static_cast<Real>(size) - 0.5);
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = (1.0 - coverage) * (bg + base[c]) + coverage * (foreground + fg_offset[c]);
      }
    }
  }

  if (!confound.empty()) {
    const Rgb color = confound_color(confound);
    const int patch = std::max(2, static_cast<int>(std::lround(10 * scale)));
    const int margin = std::max(1, static_cast<int>(std::lround(3 * scale)));
    const int x0 = (corner & 1) ? size - margin - patch : margin;
    const int y0 = (corner & 2) ? size - margin - patch : margin;
    const Real rgb[3] = {color.r, color.g, color.b};
    for (int y = y0; y < y0 + patch; ++y) {
      for (int x = x0; x < x0 + patch; ++x) {
        for (int c = 0; c < 3; ++c) image.at(c, y, x) = rgb[c];
      }
    }
  }

  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < image.pixels(); ++i) {
      const Real v = std::clamp(image.planes(c, i) + pixel_noise * noise(rng), 0.0, 1.0);
      image.planes(c, i) = std::round(v * 255.0) / 255.0;
    }
  }
  return image;
}

Dataset synth_planted_dataset(const ScenarioSpec& spec) {
  validate(spec);
  Dataset dataset;
  dataset.class_names = spec.base_classes;
  dataset.scenario = spec;
  for (const auto& name : spec.base_classes) {
    dataset.group_names.push_back(name);
    dataset.group_names.push_back(name + "+" + spec.confound_attribute);
  }
  struct Plan {
    const char* name;
    int per_class;
    Real rate;
  };
  const Plan plans[] = {{"train", spec.train_per_class, spec.train_confound_rate},
                        {"val", spec.val_per_class, spec.train_confound_rate},
                        {"test", spec.test_per_class, spec.test_confound_rate}};
  for (std::uint64_t p = 0; p < 3; ++p) {
    Split split;
    split.name = plans[p].name;
    for (int c = 0; c < static_cast<int>(spec.base_classes.size()); ++c) {
      const int confounded =
          c == spec.confounded_class
              ? static_cast<int>(std::lround(plans[p].rate * plans[p].per_class))
              : 0;
      for (int i = 0; i < plans[p].per_class; ++i) {
        Sample s;
        char id[96];
        std::snprintf(id, sizeof(id), "%s-%s-%04d", plans[p].name,
                      spec.base_classes[static_cast<std::size_t>(c)].c_str(), i);
        s.id = id;
        s.label = c;
        s.confound = i < confounded;
        s.group = 2 * c + (s.confound ? 1 : 0);
        s.image = render_shape_image(spec.base_classes[static_cast<std::size_t>(c)],
                                     s.confound ? spec.confound_attribute : std::string(),
                                     derive_seed(spec.seed, p, static_cast<std::uint64_t>(c),
                                                 static_cast<std::uint64_t>(i)),
                                     spec.image_size, spec.pixel_noise);
        split.samples.push_back(std::move(s));
      }
    }
    dataset.splits.push_back(std::move(split));
  }
  return dataset;
}

std::vector<std::pair<Image<Real>, Image<Real>>> render_confound_pairs(const ScenarioSpec& spec,
                                                                        int pairs_per_class,
                                                                        std::uint64_t seed) {
  validate(spec);
  std::vector<std::pair<Image<Real>, Image<Real>>> pairs;
  for (std::size_t c = 0; c < spec.base_classes.size(); ++c) {
    for (int i = 0; i < pairs_per_class; ++i) {
      const std::uint64_t s = derive_seed(seed, 7, c, static_cast<std::uint64_t>(i));
      pairs.emplace_back(
          render_shape_image(spec.base_classes[c], "", s, spec.image_size, spec.pixel_noise),
          render_shape_image(spec.base_classes[c], spec.confound_attribute, s, spec.image_size,
                             spec.pixel_noise));
    }
  }
  return pairs;
}

std::pair<Split, Split> split_validation(const Split& data, int num_classes, Real fraction,
                                         std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "validation fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const int label = data.samples[i].label;
    if (label < 0 || label >= num_classes) {
      throw Error(ErrorCode::kInvalidArgument, "sample label out of range");
    }
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  std::vector<bool> to_val(data.samples.size(), false);
  std::mt19937_64 rng(seed);
  for (int c = 0; c < num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    if (members.size() < 2) {
      throw Error(ErrorCode::kClassTooSmall,
                  "class " + std::to_string(c) + " has fewer than 2 samples");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<long>(members.size());
    const long n_val = std::clamp(std::lround(fraction * static_cast<Real>(n)), 1L, n - 1);
    for (long i = 0; i < n_val; ++i) to_val[members[static_cast<std::size_t>(i)]] = true;
  }
  Split train{data.name + "/train", {}};
  Split val{data.name + "/val", {}};
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    (to_val[i] ? val : train).samples.push_back(data.samples[i]);
  }
  return {std::move(train), std::move(val)};
}

MistakeSet collect_mistakes(const ClassifierHandle& handle, const Split& split, int class_id) {
  if (class_id < 0 || class_id >= handle.num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "class id out of range");
  }
  MistakeSet set;
  set.class_id = class_id;
  set.source_split = split.name;
  for (const auto& s : split.samples) {
    if (s.label != class_id) continue;
    const int predicted = argmax(predict_image(handle, s.image));
    if (predicted != class_id) set.samples.push_back({s.id, predicted, s.label});
  }
  return set;
}

const Sample& find_sample(const Split& split, const std::string& id) {
  for (const auto& s : split.samples) {
    if (s.id == id) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "split '" + split.name + "' has no sample '" + id + "'");
}

LabeledFeatures features_for_split(const ClassifierHandle& handle, const Split& split) {
  LabeledFeatures out;
  out.features.reserve(split.samples.size());
  for (const auto& s : split.samples) {
    out.features.push_back(extract_features(handle, s.image));
    out.labels.push_back(s.label);
    out.groups.push_back(s.group);
  }
  return out;
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  json splits = json::object();
  for (const auto& split : dataset.splits) {
    json entries = json::array();
    for (const auto& s : split.samples) {
      const std::string cls = dataset.class_names.at(static_cast<std::size_t>(s.label));
      const fs::path rel = fs::path(split.name) / cls / (s.id + ".png");
      write_png(s.image, root / rel);
      entries.push_back({{"id", s.id},
                         {"file", rel.generic_string()},
                         {"label", s.label},
                         {"group", s.group},
                         {"confound", s.confound}});
    }
    splits[split.name] = std::move(entries);
  }
  json meta = {{"format", "neuronlens-dataset/1"},
               {"class_names", dataset.class_names},
               {"group_names", dataset.group_names},
               {"splits", splits}};
  if (dataset.scenario) meta["scenario"] = *dataset.scenario;
  fs::create_directories(root);
  std::ofstream out(root / "metadata.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write dataset metadata under " + root.string());
  out << meta.dump(1);
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Split read_class_tree(const fs::path& dir, const std::string& name,
                      const std::vector<std::string>& classes) {
  Split split{name, {}};
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const fs::path class_dir = dir / classes[c];
    if (!fs::is_directory(class_dir)) continue;
    for (const auto& file : sorted_entries(class_dir, false)) {
      Sample s;
      s.id = name + "-" + classes[c] + "-" + file.stem().string();
      s.label = static_cast<int>(c);
      s.image = read_png(file);
      split.samples.push_back(std::move(s));
    }
  }
  return split;
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::kIoError, "no dataset at " + root.string());
  Dataset dataset;
  const fs::path meta_path = root / "metadata.json";
  if (fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    json meta;
    try {
      meta = json::parse(in);
      dataset.class_names = meta.at("class_names").get<std::vector<std::string>>();
      dataset.group_names = meta.value("group_names", std::vector<std::string>{});
      if (meta.contains("scenario")) dataset.scenario = meta.at("scenario").get<ScenarioSpec>();
      for (const auto& [name, entries] : meta.at("splits").items()) {
        Split split{name, {}};
        for (const auto& e : entries) {
          Sample s;
          s.id = e.at("id").get<std::string>();
          s.label = e.at("label").get<int>();
          s.group = e.value("group", -1);
          s.confound = e.value("confound", false);
          s.image = read_png(root / e.at("file").get<std::string>());
          split.samples.push_back(std::move(s));
        }
        dataset.splits.push_back(std::move(split));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kIoError, meta_path.string() + ": " + e.what());
    }
    // Keep a stable split order regardless of JSON object ordering.
    const std::map<std::string, int> rank{{"train", 0}, {"val", 1}, {"test", 2}};
    std::stable_sort(dataset.splits.begin(), dataset.splits.end(), [&](const Split& a, const Split& b) {
      const int ra = rank.count(a.name) ? rank.at(a.name) : 3;
      const int rb = rank.count(b.name) ? rank.at(b.name) : 3;
      return ra < rb;
    });
    return dataset;
  }

  // Plain image-folder layout.
  const auto top = sorted_entries(root, true);
  const bool nested = !top.empty() && std::all_of(top.begin(), top.end(), [](const fs::path& p) {
    const auto name = p.filename().string();
    return name == "train" || name == "val" || name == "test";
  });
  if (nested) {
    for (const auto& class_dir : sorted_entries(top.front(), true)) {
      dataset.class_names.push_back(class_dir.filename().string());
    }
    for (const auto& split_dir : top) {
      dataset.splits.push_back(read_class_tree(split_dir, split_dir.filename().string(), dataset.class_names));
    }
  } else {
    for (const auto& class_dir : top) dataset.class_names.push_back(class_dir.filename().string());
    dataset.splits.push_back(read_class_tree(root, "all", dataset.class_names));
  }
  return dataset;
}

}  // namespace neuronlens

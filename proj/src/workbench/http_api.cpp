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

#include "neuronlens/http_api.hpp"

#include <sstream>

#include <httplib.h>

#include "neuronlens/errors.hpp"

namespace neuronlens {
namespace {

void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(2), "application/json");
}

void send_error(httplib::Response& res, const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    send_json(res, {{"error", {{"code", error_code_name(err->code())}, {"message", err->what()}}}},
              http_status(err->code()));
  } else if (dynamic_cast<const Json::exception*>(&e) != nullptr) {
    send_json(res, {{"error", {{"code", "InvalidArgument"}, {"message", e.what()}}}}, 400);
  } else {
    send_json(res, {{"error", {{"code", "Internal"}, {"message", e.what()}}}}, 500);
  }
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const std::exception& e) {
      send_error(res, e);
    }
  };
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("request body is not JSON: ") + e.what());
  }
}

// "class:neuron" pairs separated by commas.
std::vector<EditTarget> parse_targets(const std::string& text) {
  std::vector<EditTarget> targets;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      targets.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "targets must look like 'class:neuron,...', got '" + item + "'");
    }
  }
  return targets;
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownRun:
    case ErrorCode::kUnknownJob:
    case ErrorCode::kUnknownNeuron:
      return 404;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kUnsupportedArchitecture:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kNeuronOutOfRange:
    case ErrorCode::kEmptyMistakeSet:
    case ErrorCode::kEncoderUnavailable:
    case ErrorCode::kClassTooSmall:
    case ErrorCode::kEmptySplit:
    case ErrorCode::kSplitMismatch:
      return 400;
    default:
      return 500;
  }
}

void register_routes(httplib::Server& server, Workbench& bench, const std::filesystem::path& static_dir) {
  server.Get("/runs", guarded([&bench](const httplib::Request&, httplib::Response& res) {
    send_json(res, {{"runs", bench.list_runs()}});
  }));
  server.Post("/runs", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    const RunRequest request = parse_body(req).get<RunRequest>();
    const auto [run_id, job_id] = bench.submit_run(request);
    send_json(res, {{"run_id", run_id}, {"job_id", job_id}}, 202);
  }));
  server.Get("/runs/:id", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    send_json(res, bench.get_run(req.path_params.at("id")));
  }));
  server.Get("/runs/:id/ranking", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    send_json(res, bench.get_ranking(req.path_params.at("id")));
  }));
  server.Post("/runs/:id/visualizations", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    const VisualizationRequest request = parse_body(req).get<VisualizationRequest>();
    const std::string job_id = bench.request_visualizations(req.path_params.at("id"), request);
    send_json(res, {{"job_id", job_id}}, 202);
  }));
  server.Get("/runs/:id/gallery", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    send_json(res, bench.get_gallery(req.path_params.at("id")));
  }));
  server.Post("/runs/:id/edits", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    const EditRequest request = parse_body(req).get<EditRequest>();
    const std::string job_id = bench.submit_edit(req.path_params.at("id"), request);
    send_json(res, {{"job_id", job_id}}, 202);
  }));
  server.Get("/runs/:id/metrics", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    send_json(res, bench.get_metrics(req.path_params.at("id")));
  }));
  server.Get("/runs/:id/suggest-o", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    const std::string targets = req.has_param("targets") ? req.get_param_value("targets") : std::string();
    send_json(res, bench.suggest_o(req.path_params.at("id"), parse_targets(targets)));
  }));
  server.Get("/jobs/:id", guarded([&bench](const httplib::Request& req, httplib::Response& res) {
    send_json(res, bench.job(req.path_params.at("id")));
  }));

  server.set_mount_point("/files", (bench.root() / "runs").string());
  if (!static_dir.empty()) server.set_mount_point("/", static_dir.string());
}

void serve(Workbench& bench, const std::string& host, int port, const std::filesystem::path& static_dir) {
  httplib::Server server;
  register_routes(server, bench, static_dir);
  if (!server.listen(host, port)) {
    throw Error(ErrorCode::kIoError, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

}  // namespace neuronlens

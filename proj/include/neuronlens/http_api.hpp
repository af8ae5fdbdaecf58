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
#include <string>

#include "neuronlens/workbench.hpp"

namespace httplib {
class Server;
}

namespace neuronlens {

// HTTP status for a library error: unknown resources map to 404, invalid
// requests to 400, everything else to 500.
int http_status(ErrorCode code);

// JSON API over `bench`. Gallery PNGs and other run artifacts are served
// read-only under /files/<run_id>/...; `static_dir`, when non-empty, is
// mounted at / for the browser client.
void register_routes(httplib::Server& server, Workbench& bench,
                     const std::filesystem::path& static_dir = {});

// Blocks until the server stops.
void serve(Workbench& bench, const std::string& host, int port,
           const std::filesystem::path& static_dir = {});

}  // namespace neuronlens

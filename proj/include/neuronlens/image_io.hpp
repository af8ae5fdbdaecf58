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

#include <cstdint>
#include <filesystem>
#include <vector>

#include "neuronlens/tensor.hpp"

namespace neuronlens {

// 8-bit RGB PNG. Values are clamped to [0, 1] and rounded on encode.
std::vector<std::uint8_t> encode_png(const Image<double>& image);
Image<double> decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const Image<double>& image, const std::filesystem::path& path);
Image<double> read_png(const std::filesystem::path& path);

}  // namespace neuronlens

// Copyright 2026 The Twinbench Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "twinbench/nn/layers.hpp"

namespace twinbench::nn {

// Binary container of named tensors. Layout (all integers little-endian):
//   magic "TBNN" | u32 version | u64 count |
//   count x { u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 data[numel] }
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

std::string encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(const std::string& bytes);

NamedTensors to_named(const ParamList& params);
// Loads values into `params` by name; every parameter must be present with a matching shape.
void assign_named(const NamedTensors& tensors, const ParamList& params);

void save_params(const std::filesystem::path& path, const ParamList& params);
void load_params(const std::filesystem::path& path, const ParamList& params);

}  // namespace twinbench::nn

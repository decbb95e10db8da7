// Copyright 2026  The distill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Flat binary tensor checkpoints.
//
//   header : "ADTN" | version u32
//   record : name_len u32 | name bytes (UTF-8) | rank u32 | dims u64[rank]
//            | payload f64[prod(dims)] (row-major)
//
// Records follow the header until end of file. All integers and floats are
// little-endian, so a write/read round trip is bit-exact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_tensors(const std::vector<NamedTensor>& tensors);
// Returned tensors are parameters (requires_grad).
std::vector<NamedTensor> deserialize_tensors(const std::string& bytes);

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

// 64-bit FNV-1a, hex encoded.
std::string content_hash(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace distill

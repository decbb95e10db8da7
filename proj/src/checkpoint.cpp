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

#include "distill/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "binary_io.hpp"
#include "distill/errors.hpp"

namespace distill {
namespace {

constexpr char kMagic[4] = {'A', 'D', 'T', 'N'};

}  // namespace

std::string serialize_tensors(const std::vector<NamedTensor>& tensors) {
  detail::ByteWriter out;
  out.raw(std::string(kMagic, 4));
  out.u32(kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    out.u32(static_cast<std::uint32_t>(name.size()));
    out.raw(name);
    out.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) out.u64(d);
    const Matrix& v = t.value();
    // Row-major storage is contiguous.
    for (Eigen::Index i = 0; i < v.size(); ++i) out.f64(v.data()[i]);
  }
  return out.take();
}

std::vector<NamedTensor> deserialize_tensors(const std::string& bytes) {
  detail::ByteReader in(bytes, "checkpoint");
  if (in.raw(4) != std::string(kMagic, 4)) throw IoError("not a tensor checkpoint (bad magic)");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedTensor> out;
  while (!in.done()) {
    const auto name_len = in.u32();
    std::string name = in.raw(name_len);
    const auto rank = in.u32();
    if (rank > 2) throw IoError("checkpoint tensor '" + name + "' has unsupported rank");
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(in.u64());
    auto [r, c] = storage_dims(shape);
    Matrix v(r, c);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = in.f64();
    out.push_back({std::move(name), Tensor::parameter(std::move(shape), std::move(v))});
  }
  return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file(path, serialize_tensors(tensors));
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  return deserialize_tensors(read_file(path));
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory for " + path.string() + ": " + ec.message());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path.string());
}

}  // namespace distill

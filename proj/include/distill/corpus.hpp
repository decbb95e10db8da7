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

// Synthetic parallel-domain corpus.
//
// Each content token owns a prototype frame drawn once from the seed. An
// utterance renders its tokens as prototype frames repeated for a random
// duration with additive jitter (the clean, source-domain view). The
// target-domain view is the same frame sequence passed through a causal FIR
// channel along the frame axis, scaled by a gain, plus white noise. Both views
// are then frame-stacked, so they stay frame-synchronized.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill/tensor.hpp"
#include "distill/vocab.hpp"

namespace distill {

struct CorpusSpec {
  int vocab_size = 32;
  int utterances = 4400;
  // train, adapt, dev, test
  std::array<double, 4> split_fractions{2000.0 / 4400.0, 2000.0 / 4400.0, 200.0 / 4400.0, 200.0 / 4400.0};
  int min_tokens = 3;
  int max_tokens = 8;
  int min_frames_per_token = 2;
  int max_frames_per_token = 4;
  int input_dim = 8;
  // Prototype entries are N(0, prototype_scale^2); jitter and noise_sigma are
  // absolute standard deviations on the same scale.
  double prototype_scale = 3.0;
  double jitter = 0.2;
  double noise_sigma = 1.0;
  std::vector<double> channel_taps{0.6, 0.3, 0.2, 0.1, 0.05};
  double gain = 1.0;
  std::uint64_t seed = 1;
  int stack_frames = 3;
  int stack_stride = 3;

  void validate() const;
  int stacked_dim() const { return input_dim * stack_frames; }
  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static CorpusSpec from_json(const nlohmann::json& j);
};

struct ParallelUtterance {
  std::uint64_t id = 0;
  Matrix source;            // X^T, clean frames (N x d)
  Matrix target;            // X^S, corrupted frames, same N
  std::vector<int> labels;  // Y^G with <sos> ... <eos>
};

inline constexpr const char* kSplitNames[4] = {"train", "adapt", "dev", "test"};

struct CorpusSplits {
  std::vector<ParallelUtterance> train;
  std::vector<ParallelUtterance> adapt;
  std::vector<ParallelUtterance> dev;
  std::vector<ParallelUtterance> test;

  std::vector<ParallelUtterance>& operator[](std::size_t i);
  const std::vector<ParallelUtterance>& operator[](std::size_t i) const;
};

// Deterministic in spec.seed; utterance ids are 0..utterances-1.
std::vector<ParallelUtterance> gen_corpus(const CorpusSpec& spec);

// Concatenates k consecutive frames every `stride` frames; frames past the
// end repeat the last frame. Output is ceil(N / stride) x (k * d).
Matrix frame_stack(const Matrix& frames, int k, int stride);

// Shuffles with `seed`, cuts contiguous chunks of round(fraction * n), the
// last split taking the remainder, and orders each split by utterance id.
CorpusSplits split_corpus(std::vector<ParallelUtterance> corpus, std::span<const double> fractions,
                          std::uint64_t seed);

// Mean over frames of ||x^S_n - x^T_n||_2.
double mean_frame_distance(std::span<const ParallelUtterance> utts);

// On-disk layout: <dir>/<split>/meta.json and <dir>/<split>/utts.bin.
//
// utts.bin: "ADUT" | version u32 | records until EOF, each
//   utt_id u64 | N u32 | d u32 | X^T f64[N*d] | X^S f64[N*d] | L u32 | ids u32[L]
// little-endian, row-major frames.
struct CorpusSplit {
  std::string name;
  CorpusSpec spec;
  Vocab vocab;
  std::vector<ParallelUtterance> utterances;
};

std::string serialize_utterances(std::span<const ParallelUtterance> utts);
std::vector<ParallelUtterance> deserialize_utterances(const std::string& bytes);

void write_split(const std::filesystem::path& corpus_dir, const std::string& name, const CorpusSpec& spec,
                 const Vocab& vocab, std::span<const ParallelUtterance> utts);
CorpusSplit read_split(const std::filesystem::path& corpus_dir, const std::string& name);

struct CorpusSummary {
  std::size_t utterances = 0;
  std::size_t frames = 0;
  std::size_t vocab_size = 0;
  std::array<std::size_t, 4> split_sizes{};
  double mean_distance = 0.0;
};

// gen_corpus + split_corpus + write_split for all four splits.
CorpusSummary write_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

}  // namespace distill

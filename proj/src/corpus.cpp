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

#include "distill/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "distill/checkpoint.hpp"
#include "distill/errors.hpp"
#include "distill/rng.hpp"

namespace distill {
namespace {

using Index = Eigen::Index;

constexpr char kUttMagic[4] = {'A', 'D', 'U', 'T'};
constexpr std::uint32_t kUttVersion = 1;

// Stream ids for mix_seed.
constexpr std::uint64_t kPrototypeStream = 0;
constexpr std::uint64_t kUtteranceStreamBase = 1000;

Matrix render_prototypes(const CorpusSpec& spec) {
  Rng rng(mix_seed(spec.seed, kPrototypeStream));
  Matrix protos(spec.vocab_size, spec.input_dim);
  for (Index i = 0; i < protos.size(); ++i) protos.data()[i] = rng.normal(0.0, spec.prototype_scale);
  return protos;
}

}  // namespace

void CorpusSpec::validate() const {
  if (vocab_size < 5) throw ConfigError("vocab_size must leave at least one content token");
  if (utterances < 1) throw ConfigError("utterances must be positive");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("invalid token-length range");
  if (min_frames_per_token < 1 || max_frames_per_token < min_frames_per_token) {
    throw ConfigError("invalid frames-per-token range");
  }
  if (input_dim < 1) throw ConfigError("input_dim must be positive");
  if (!(prototype_scale > 0.0) || !std::isfinite(prototype_scale)) {
    throw ConfigError("prototype_scale must be positive");
  }
  if (!(jitter >= 0.0)) throw ConfigError("jitter must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (channel_taps.empty()) throw ConfigError("channel_taps must be nonempty");
  if (!std::isfinite(gain)) throw ConfigError("gain must be finite");
  if (stack_frames < 1 || stack_stride < 1) throw ConfigError("frame stacking factors must be >= 1");
  double total = 0.0;
  for (double f : split_fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

nlohmann::json CorpusSpec::to_json() const {
  return {{"vocab_size", vocab_size},
          {"utterances", utterances},
          {"split_fractions", split_fractions},
          {"min_tokens", min_tokens},
          {"max_tokens", max_tokens},
          {"min_frames_per_token", min_frames_per_token},
          {"max_frames_per_token", max_frames_per_token},
          {"input_dim", input_dim},
          {"prototype_scale", prototype_scale},
          {"jitter", jitter},
          {"noise_sigma", noise_sigma},
          {"channel_taps", channel_taps},
          {"gain", gain},
          {"seed", seed},
          {"stack_frames", stack_frames},
          {"stack_stride", stack_stride}};
}

CorpusSpec CorpusSpec::from_json(const nlohmann::json& j) {
  CorpusSpec s;
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.utterances = j.value("utterances", s.utterances);
  if (j.contains("split_fractions")) s.split_fractions = j.at("split_fractions").get<std::array<double, 4>>();
  s.min_tokens = j.value("min_tokens", s.min_tokens);
  s.max_tokens = j.value("max_tokens", s.max_tokens);
  s.min_frames_per_token = j.value("min_frames_per_token", s.min_frames_per_token);
  s.max_frames_per_token = j.value("max_frames_per_token", s.max_frames_per_token);
  s.input_dim = j.value("input_dim", s.input_dim);
  s.prototype_scale = j.value("prototype_scale", s.prototype_scale);
  s.jitter = j.value("jitter", s.jitter);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.channel_taps = j.value("channel_taps", s.channel_taps);
  s.gain = j.value("gain", s.gain);
  s.seed = j.value("seed", s.seed);
  s.stack_frames = j.value("stack_frames", s.stack_frames);
  s.stack_stride = j.value("stack_stride", s.stack_stride);
  s.validate();
  return s;
}

std::vector<ParallelUtterance>& CorpusSplits::operator[](std::size_t i) {
  switch (i) {
    case 0: return train;
    case 1: return adapt;
    case 2: return dev;
    case 3: return test;
    default: throw ContractError("split index out of range");
  }
}

const std::vector<ParallelUtterance>& CorpusSplits::operator[](std::size_t i) const {
  return const_cast<CorpusSplits&>(*this)[i];
}

Matrix frame_stack(const Matrix& frames, int k, int stride) {
  if (k < 1 || stride < 1) throw ContractError("frame_stack: k and stride must be >= 1");
  const Index n = frames.rows();
  const Index d = frames.cols();
  if (n == 0) return Matrix(0, d * k);
  const Index out_rows = (n + stride - 1) / stride;
  Matrix out(out_rows, d * k);
  for (Index i = 0; i < out_rows; ++i) {
    for (Index j = 0; j < k; ++j) {
      const Index src = std::min(i * stride + j, n - 1);
      out.block(i, j * d, 1, d) = frames.row(src);
    }
  }
  return out;
}

std::vector<ParallelUtterance> gen_corpus(const CorpusSpec& spec) {
  spec.validate();
  const Vocab vocab = Vocab::synthetic(static_cast<std::size_t>(spec.vocab_size));
  const std::vector<int> content = vocab.content_ids();
  const Matrix protos = render_prototypes(spec);
  const auto taps = static_cast<Index>(spec.channel_taps.size());

  std::vector<ParallelUtterance> corpus;
  corpus.reserve(static_cast<std::size_t>(spec.utterances));
  for (int u = 0; u < spec.utterances; ++u) {
    Rng rng(mix_seed(spec.seed, kUtteranceStreamBase + static_cast<std::uint64_t>(u)));
    ParallelUtterance utt;
    utt.id = static_cast<std::uint64_t>(u);
    utt.labels.push_back(vocab.sos());
    std::vector<int> durations;
    const int length = rng.uniform_int(spec.min_tokens, spec.max_tokens);
    for (int i = 0; i < length; ++i) {
      utt.labels.push_back(content[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(content.size()) - 1))]);
      durations.push_back(rng.uniform_int(spec.min_frames_per_token, spec.max_frames_per_token));
    }
    utt.labels.push_back(vocab.eos());

    const int frames = std::accumulate(durations.begin(), durations.end(), 0);
    Matrix clean(frames, spec.input_dim);
    Index t = 0;
    for (int i = 0; i < length; ++i) {
      for (int f = 0; f < durations[static_cast<std::size_t>(i)]; ++f, ++t) {
        for (Index c = 0; c < spec.input_dim; ++c) {
          clean(t, c) = protos(utt.labels[static_cast<std::size_t>(i) + 1], c) + rng.normal(0.0, 1.0) * spec.jitter;
        }
      }
    }

    Matrix corrupt(frames, spec.input_dim);
    for (Index r = 0; r < frames; ++r) {
      for (Index c = 0; c < spec.input_dim; ++c) {
        double acc = 0.0;
        for (Index k = 0; k < taps && k <= r; ++k) acc += spec.channel_taps[static_cast<std::size_t>(k)] * clean(r - k, c);
        corrupt(r, c) = spec.gain * acc;
      }
    }
    if (spec.noise_sigma > 0.0) {
      for (Index i = 0; i < corrupt.size(); ++i) corrupt.data()[i] += rng.normal(0.0, spec.noise_sigma);
    }

    utt.source = frame_stack(clean, spec.stack_frames, spec.stack_stride);
    utt.target = frame_stack(corrupt, spec.stack_frames, spec.stack_stride);
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

CorpusSplits split_corpus(std::vector<ParallelUtterance> corpus, std::span<const double> fractions,
                          std::uint64_t seed) {
  if (fractions.size() != 4) throw ConfigError("need four split fractions (train, adapt, dev, test)");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  const std::size_t n = corpus.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 7));
  std::shuffle(order.begin(), order.end(), rng.engine());

  CorpusSplits splits;
  std::size_t begin = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    std::size_t count = s < 3 ? static_cast<std::size_t>(std::llround(fractions[s] * static_cast<double>(n)))
                              : n - begin;
    count = std::min(count, n - begin);
    auto& dst = splits[s];
    for (std::size_t i = begin; i < begin + count; ++i) dst.push_back(std::move(corpus[order[i]]));
    std::sort(dst.begin(), dst.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    begin += count;
  }
  return splits;
}

double mean_frame_distance(std::span<const ParallelUtterance> utts) {
  double total = 0.0;
  std::size_t frames = 0;
  for (const auto& u : utts) {
    if (u.source.rows() != u.target.rows()) throw ContractError("utterance views are not frame-synchronized");
    total += (u.target - u.source).rowwise().norm().sum();
    frames += static_cast<std::size_t>(u.source.rows());
  }
  return frames == 0 ? 0.0 : total / static_cast<double>(frames);
}

std::string serialize_utterances(std::span<const ParallelUtterance> utts) {
  detail::ByteWriter out;
  out.raw(std::string(kUttMagic, 4));
  out.u32(kUttVersion);
  for (const auto& u : utts) {
    if (u.source.rows() != u.target.rows() || u.source.cols() != u.target.cols()) {
      throw ContractError("utterance " + std::to_string(u.id) + " views differ in shape");
    }
    out.u64(u.id);
    out.u32(static_cast<std::uint32_t>(u.source.rows()));
    out.u32(static_cast<std::uint32_t>(u.source.cols()));
    for (Index i = 0; i < u.source.size(); ++i) out.f64(u.source.data()[i]);
    for (Index i = 0; i < u.target.size(); ++i) out.f64(u.target.data()[i]);
    out.u32(static_cast<std::uint32_t>(u.labels.size()));
    for (int id : u.labels) out.u32(static_cast<std::uint32_t>(id));
  }
  return out.take();
}

std::vector<ParallelUtterance> deserialize_utterances(const std::string& bytes) {
  detail::ByteReader in(bytes, "utterance file");
  if (in.raw(4) != std::string(kUttMagic, 4)) throw IoError("not an utterance file (bad magic)");
  if (in.u32() != kUttVersion) throw IoError("unsupported utterance file version");
  std::vector<ParallelUtterance> utts;
  while (!in.done()) {
    ParallelUtterance u;
    u.id = in.u64();
    const Index n = in.u32();
    const Index d = in.u32();
    u.source.resize(n, d);
    u.target.resize(n, d);
    for (Index i = 0; i < u.source.size(); ++i) u.source.data()[i] = in.f64();
    for (Index i = 0; i < u.target.size(); ++i) u.target.data()[i] = in.f64();
    const std::uint32_t len = in.u32();
    for (std::uint32_t i = 0; i < len; ++i) u.labels.push_back(static_cast<int>(in.u32()));
    utts.push_back(std::move(u));
  }
  return utts;
}

void write_split(const std::filesystem::path& corpus_dir, const std::string& name, const CorpusSpec& spec,
                 const Vocab& vocab, std::span<const ParallelUtterance> utts) {
  const auto dir = corpus_dir / name;
  std::size_t frames = 0;
  for (const auto& u : utts) frames += static_cast<std::size_t>(u.source.rows());
  nlohmann::json meta = {{"format", "distill-corpus"},
                         {"version", kUttVersion},
                         {"split", name},
                         {"utterances", utts.size()},
                         {"frames", frames},
                         {"frame_dim", spec.stacked_dim()},
                         {"spec", spec.to_json()},
                         {"vocab", vocab.to_json()}};
  write_file(dir / "meta.json", meta.dump(2) + "\n");
  write_file(dir / "utts.bin", serialize_utterances(utts));
}

CorpusSplit read_split(const std::filesystem::path& corpus_dir, const std::string& name) {
  const auto dir = corpus_dir / name;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad corpus metadata " + (dir / "meta.json").string() + ": " + e.what());
  }
  CorpusSplit split{name, CorpusSpec::from_json(meta.at("spec")), Vocab::from_json(meta.at("vocab")),
                    deserialize_utterances(read_file(dir / "utts.bin"))};
  if (split.utterances.size() != meta.at("utterances").get<std::size_t>()) {
    throw IoError("utterance count in " + dir.string() + " disagrees with meta.json");
  }
  return split;
}

CorpusSummary write_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  const Vocab vocab = Vocab::synthetic(static_cast<std::size_t>(spec.vocab_size));
  auto corpus = gen_corpus(spec);
  CorpusSummary summary;
  summary.utterances = corpus.size();
  summary.vocab_size = vocab.size();
  summary.mean_distance = mean_frame_distance(corpus);
  for (const auto& u : corpus) summary.frames += static_cast<std::size_t>(u.source.rows());
  auto splits = split_corpus(std::move(corpus), spec.split_fractions, spec.seed);
  for (std::size_t s = 0; s < 4; ++s) {
    summary.split_sizes[s] = splits[s].size();
    write_split(out_dir, kSplitNames[s], spec, vocab, splits[s]);
  }
  return summary;
}

}  // namespace distill

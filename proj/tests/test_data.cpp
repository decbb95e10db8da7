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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "distill/checkpoint.hpp"
#include "distill/corpus.hpp"
#include "distill/errors.hpp"
#include "distill/vocab.hpp"
#include "test_util.hpp"

using namespace distill;
using distill::testing::random_matrix;

namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.utterances = 60;
  s.split_fractions = {0.5, 0.3, 0.1, 0.1};
  return s;
}

// Inverse of non-overlapping stacking (k == stride) with `frames` rows kept.
Matrix unstack(const Matrix& stacked, int k, Eigen::Index frames) {
  const Eigen::Index d = stacked.cols() / k;
  Matrix out(stacked.rows() * k, d);
  for (Eigen::Index r = 0; r < stacked.rows(); ++r) {
    for (int j = 0; j < k; ++j) out.row(r * k + j) = stacked.block(r, j * d, 1, d);
  }
  return out.topRows(frames);
}

}  // namespace

TEST_CASE("clean channel without noise leaves the frames unchanged") {
  CorpusSpec s = small_spec();
  s.noise_sigma = 0.0;
  s.channel_taps = {1.0};
  s.gain = 1.0;
  for (const auto& u : gen_corpus(s)) CHECK(u.source == u.target);
}

TEST_CASE("generation is deterministic and frame-synchronized") {
  const CorpusSpec s = small_spec();
  const auto a = gen_corpus(s);
  const auto b = gen_corpus(s);
  REQUIRE(a.size() == 60);
  CHECK(serialize_utterances(a) == serialize_utterances(b));
  const Vocab vocab = Vocab::synthetic(static_cast<std::size_t>(s.vocab_size));
  for (const auto& u : a) {
    CHECK(u.source.rows() == u.target.rows());
    CHECK(u.source.cols() == s.stacked_dim());
    CHECK(u.labels.front() == vocab.sos());
    CHECK(u.labels.back() == vocab.eos());
    const auto content = u.labels.size() - 2;
    CHECK(content >= static_cast<std::size_t>(s.min_tokens));
    CHECK(content <= static_cast<std::size_t>(s.max_tokens));
  }
  CorpusSpec other = s;
  other.seed = 2;
  CHECK(serialize_utterances(gen_corpus(other)) != serialize_utterances(a));
}

TEST_CASE("corruption distance grows with the noise level") {
  CorpusSpec s = small_spec();
  double previous = -1.0;
  for (double sigma : {0.1, 0.5, 1.0}) {
    s.noise_sigma = sigma;
    const auto corpus = gen_corpus(s);
    const double d = mean_frame_distance(corpus);
    CHECK(d > previous);
    previous = d;
  }
}

TEST_CASE("spec validation") {
  CorpusSpec s = small_spec();
  s.noise_sigma = -1.0;
  CHECK_THROWS_AS(gen_corpus(s), ConfigError);
  s = small_spec();
  s.min_tokens = 5;
  s.max_tokens = 4;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.channel_taps.clear();
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.split_fractions = {0.5, 0.5, 0.5, 0.0};
  CHECK_THROWS_AS(s.validate(), ConfigError);

  const CorpusSpec round = CorpusSpec::from_json(small_spec().to_json());
  CHECK(round.to_json() == small_spec().to_json());
}

TEST_CASE("frame_stack hand cases and round trip") {
  Rng rng(1);
  const Matrix x = random_matrix(5, 2, rng);
  CHECK(frame_stack(x, 1, 1) == x);

  Matrix six(6, 2);
  for (Eigen::Index i = 0; i < 6; ++i) six.row(i) << 10.0 * static_cast<double>(i + 1), static_cast<double>(i + 1);
  const Matrix st = frame_stack(six, 3, 3);
  REQUIRE(st.rows() == 2);
  REQUIRE(st.cols() == 6);
  Eigen::RowVectorXd first(6);
  first << 10, 1, 20, 2, 30, 3;
  CHECK(st.row(0) == first);

  const Matrix seven = random_matrix(7, 2, rng);
  const Matrix padded = frame_stack(seven, 3, 3);
  CHECK(padded.rows() == 3);
  CHECK(padded.block(2, 0, 1, 2) == seven.row(6));
  CHECK(padded.block(2, 2, 1, 2) == seven.row(6));
  CHECK(padded.block(2, 4, 1, 2) == seven.row(6));

  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 1 + trial;
    const Matrix y = random_matrix(n, 3, rng);
    CHECK(unstack(frame_stack(y, 3, 3), 3, n) == y);
  }
  CHECK(frame_stack(x, 2, 1).rows() == 5);
  CHECK_THROWS_AS(frame_stack(x, 0, 1), ContractError);
}

TEST_CASE("tokenize and detokenize") {
  const Vocab v({"<sos>", "<eos>", "<space>", "<unk>", "ab", "cd", "ef"});
  CHECK(tokenize(v, std::vector<std::string>{}) == std::vector<int>{v.sos(), v.eos()});
  const std::vector<std::string> words{"ab", "cd"};
  CHECK(tokenize(v, words) == std::vector<int>{v.sos(), v.id("ab"), v.space(), v.id("cd"), v.eos()});
  const std::vector<std::string> oov{"zz"};
  CHECK(tokenize(v, oov) == std::vector<int>{v.sos(), v.unk(), v.eos()});

  Rng rng(2);
  const std::vector<std::string> pool{"ab", "cd", "ef"};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> seq;
    const int n = rng.uniform_int(0, 6);
    for (int i = 0; i < n; ++i) seq.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, 2))]);
    CHECK(detokenize(v, tokenize(v, seq)) == seq);
  }
}

TEST_CASE("vocabulary invariants") {
  const Vocab v = Vocab::synthetic(32);
  CHECK(v.size() == 32);
  CHECK(v.content_ids().size() == 28);
  std::set<int> specials{v.sos(), v.eos(), v.space(), v.unk()};
  CHECK(specials.size() == 4);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.token(static_cast<int>(i))) == static_cast<int>(i));
  CHECK(Vocab::from_json(v.to_json()) == v);
  CHECK_THROWS_AS(Vocab({"<sos>", "<eos>", "<space>", "<unk>", "<sos>"}), ConfigError);
  CHECK_THROWS_AS(Vocab({"<sos>", "<eos>", "<space>", "a"}), ConfigError);
  CHECK_THROWS_AS(v.token(32), ContractError);
}

TEST_CASE("split_corpus partitions deterministically") {
  const auto corpus = gen_corpus(small_spec());
  const std::array<double, 4> all_train{1.0, 0.0, 0.0, 0.0};
  const CorpusSplits only = split_corpus(corpus, all_train, 3);
  CHECK(only.train.size() == corpus.size());
  CHECK(only.adapt.empty());

  const std::array<double, 4> f{0.5, 0.3, 0.1, 0.1};
  const CorpusSplits s = split_corpus(corpus, f, 3);
  std::set<std::uint64_t> seen;
  std::size_t total = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double expected = f[i] * static_cast<double>(corpus.size());
    CHECK(std::abs(static_cast<double>(s[i].size()) - expected) <= 1.0);
    for (const auto& u : s[i]) seen.insert(u.id);
    total += s[i].size();
  }
  CHECK(total == corpus.size());
  CHECK(seen.size() == corpus.size());

  const CorpusSplits again = split_corpus(corpus, f, 3);
  const CorpusSplits other = split_corpus(corpus, f, 4);
  std::vector<std::uint64_t> a, b, c;
  for (const auto& u : s.train) a.push_back(u.id);
  for (const auto& u : again.train) b.push_back(u.id);
  for (const auto& u : other.train) c.push_back(u.id);
  CHECK(a == b);
  CHECK(a != c);

  const std::array<double, 4> bad{0.5, 0.5, 0.5, 0.0};
  CHECK_THROWS_AS(split_corpus(corpus, bad, 3), ConfigError);
}

TEST_CASE("corpus directories round-trip and rewrite byte-identically") {
  const auto dir = std::filesystem::temp_directory_path() / "distill_test_data";
  std::filesystem::remove_all(dir);
  const CorpusSpec s = small_spec();
  const CorpusSummary summary = write_corpus(s, dir / "a");
  write_corpus(s, dir / "b");
  CHECK(summary.utterances == 60);
  CHECK(summary.vocab_size == 32);
  for (const char* name : kSplitNames) {
    CHECK(std::filesystem::exists(dir / "a" / name / "meta.json"));
    CHECK(read_file(dir / "a" / name / "utts.bin") == read_file(dir / "b" / name / "utts.bin"));
    CHECK(read_file(dir / "a" / name / "meta.json") == read_file(dir / "b" / name / "meta.json"));
  }
  const auto splits = split_corpus(gen_corpus(s), s.split_fractions, s.seed);
  const CorpusSplit train = read_split(dir / "a", "train");
  CHECK(train.vocab == Vocab::synthetic(32));
  REQUIRE(train.utterances.size() == splits.train.size());
  for (std::size_t i = 0; i < splits.train.size(); ++i) {
    CHECK(train.utterances[i].id == splits.train[i].id);
    CHECK(train.utterances[i].source == splits.train[i].source);
    CHECK(train.utterances[i].target == splits.train[i].target);
    CHECK(train.utterances[i].labels == splits.train[i].labels);
  }

  std::string bytes = read_file(dir / "a" / "dev" / "utts.bin");
  CHECK_THROWS_AS(deserialize_utterances(bytes.substr(0, bytes.size() - 3)), IoError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_utterances(bytes), IoError);
  CHECK_THROWS_AS(read_split(dir / "missing", "train"), IoError);
  std::filesystem::remove_all(dir);
}

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

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace distill {

inline constexpr const char* kSosToken = "<sos>";
inline constexpr const char* kEosToken = "<eos>";
inline constexpr const char* kSpaceToken = "<space>";
inline constexpr const char* kUnkToken = "<unk>";

// Output token inventory U. Ids are dense in [0, size()); each special token
// appears exactly once.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens);

  // The four specials at ids 0..3 followed by content tokens "u00", "u01", ...
  static Vocab synthetic(std::size_t size);

  std::size_t size() const { return tokens_.size(); }
  int sos() const { return sos_; }
  int eos() const { return eos_; }
  int space() const { return space_; }
  int unk() const { return unk_; }
  bool is_special(int id) const { return id == sos_ || id == eos_ || id == space_ || id == unk_; }

  // <unk> for tokens outside the vocabulary.
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<int> content_ids() const;

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int sos_ = -1, eos_ = -1, space_ = -1, unk_ = -1;
};

// [<sos>, w1, <space>, w2, ..., wn, <eos>]
std::vector<int> tokenize(const Vocab& vocab, std::span<const std::string> words);
// Inverse of tokenize: drops <sos>/<eos> and splits words at <space>.
std::vector<std::string> detokenize(const Vocab& vocab, std::span<const int> ids);

}  // namespace distill

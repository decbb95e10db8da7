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

#include "distill/vocab.hpp"

#include <cstdio>

#include "distill/errors.hpp"

namespace distill {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
  auto find_special = [&](const char* name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError(std::string("vocabulary lacks ") + name);
    return it->second;
  };
  sos_ = find_special(kSosToken);
  eos_ = find_special(kEosToken);
  space_ = find_special(kSpaceToken);
  unk_ = find_special(kUnkToken);
}

Vocab Vocab::synthetic(std::size_t size) {
  if (size < 5) throw ConfigError("vocabulary needs at least one content token besides 4 specials");
  std::vector<std::string> tokens{kSosToken, kEosToken, kSpaceToken, kUnkToken};
  for (std::size_t i = 0; i + 4 < size; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "u%02zu", i);
    tokens.emplace_back(buf);
  }
  return Vocab(std::move(tokens));
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_ : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::content_ids() const {
  std::vector<int> ids;
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    if (!is_special(i)) ids.push_back(i);
  }
  return ids;
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json specials = {{"sos", sos_}, {"eos", eos_}, {"space", space_}, {"unk", unk_}};
  nlohmann::json token_to_id = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) token_to_id[tokens_[i]] = i;
  return {{"tokens", tokens_}, {"token_to_id", token_to_id}, {"specials", specials}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v(j.at("tokens").get<std::vector<std::string>>());
  if (j.contains("specials")) {
    const auto& s = j.at("specials");
    if (s.at("sos") != v.sos_ || s.at("eos") != v.eos_ || s.at("space") != v.space_ ||
        s.at("unk") != v.unk_) {
      throw ConfigError("vocabulary special ids disagree with token list");
    }
  }
  return v;
}

std::vector<int> tokenize(const Vocab& vocab, std::span<const std::string> words) {
  std::vector<int> ids{vocab.sos()};
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) ids.push_back(vocab.space());
    ids.push_back(vocab.id(words[i]));
  }
  ids.push_back(vocab.eos());
  return ids;
}

std::vector<std::string> detokenize(const Vocab& vocab, std::span<const int> ids) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == vocab.sos() || id == vocab.eos() || id == vocab.space()) continue;
    words.push_back(vocab.token(id));
  }
  return words;
}

}  // namespace distill

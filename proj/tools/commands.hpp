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

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace distill::cli {

enum class Verbosity { Quiet, Normal, Verbose };

struct Context {
  Verbosity verbosity = Verbosity::Normal;
  std::ostream* out = nullptr;  // results
  std::ostream* log = nullptr;  // progress
};

struct GenDataOptions {
  std::string spec;  // empty: built-in defaults
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct TrainOptions {
  std::string config;
  std::string corpus, out, init;  // override the config's paths when set
  std::optional<std::uint64_t> seed;
};

struct AdaptOptions {
  std::string config;
  std::string corpus, teacher, out;
  std::optional<std::uint64_t> seed;
};

struct EvalOptions {
  std::string config;  // optional
  std::string model, corpus, out, side;
  std::vector<std::string> splits;
};

struct CompareOptions {
  std::string config;
  std::string corpus, teacher, out;
  std::optional<int> workers;
};

struct GradcheckOptions {
  bool negative_control = false;
  std::string json;
  int op_trials = 100;
  std::uint64_t seed = 1;
};

// Each returns the process exit code. Invalid configuration throws
// ConfigError; I/O and training failures throw their own error types.
int cmd_gen_data(const GenDataOptions& o, const Context& ctx);
int cmd_train(const TrainOptions& o, const Context& ctx);
int cmd_adapt(const AdaptOptions& o, const Context& ctx);
int cmd_eval(const EvalOptions& o, const Context& ctx);
int cmd_compare(const CompareOptions& o, const Context& ctx);
int cmd_gradcheck(const GradcheckOptions& o, const Context& ctx);

// Seed precedence: explicit flag, then the config value, then DISTILL_SEED,
// then `fallback`.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config,
                           std::uint64_t fallback);

}  // namespace distill::cli

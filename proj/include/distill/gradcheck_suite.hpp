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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace distill {

// One entry of the gradient-check suite. `expect_failure` marks negative
// controls: they pass when the checker rejects them.
struct SuiteCheck {
  std::string group;  // "op", "loss", "model" or "control"
  std::string name;
  int trials = 0;
  double max_rel_error = 0.0;
  bool expect_failure = false;
  bool passed = false;
};

struct SuiteReport {
  std::vector<SuiteCheck> checks;
  double epsilon = 0.0;
  double tolerance = 0.0;
  double wall_seconds = 0.0;

  bool passed() const;
  nlohmann::json to_json() const;
};

struct SuiteOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  int op_trials = 100;
  int loss_trials = 5;
  std::uint64_t seed = 1;
  // Adds a deliberately wrong backward rule that the suite must flag.
  bool negative_control = false;
};

// Central-difference checks over every autodiff op, every training loss and
// a micro AED under CE and AT/S.
SuiteReport run_gradcheck_suite(const SuiteOptions& options = {});

}  // namespace distill

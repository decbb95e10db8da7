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

// Method-comparison grid: a corrupted-side CE baseline warm-started from the
// teacher, token-level and sequence-level T/S, IT/S over a weight grid, CT/S
// and AT/S over a lambda grid, each repeated over several seeds, plus the
// unadapted teacher evaluated on corrupted frames.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill/corpus.hpp"
#include "distill/eval.hpp"
#include "distill/trainer.hpp"

namespace distill {

inline constexpr const char* kTeacherRow = "teacher_unadapted";
inline constexpr const char* kBaselineRow = "ce_target";
inline constexpr const char* kTokenTsRow = "token_ts";
inline constexpr const char* kSeqTsRow = "seq_ts";
inline constexpr const char* kCtsRow = "cts";

std::string its_row(double w);
std::string ats_row(double lambda);

struct CompareConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  // Seeds run concurrently on this many threads; results do not depend on it.
  int workers = 1;
  std::vector<double> its_weights{0.2, 0.5, 0.8};
  std::vector<double> lambdas{0.1, 0.25, 1.0, 3.0};
  // Mode CE; the side is forced to target frames.
  TrainConfig baseline;
  // Shared settings of every adaptation cell; mode, lambda and its_weight
  // are set per cell.
  TrainConfig adaptation;

  CompareConfig();
  void validate() const;
  nlohmann::json to_json() const;
  static CompareConfig from_json(const nlohmann::json& j);
};

struct CellResult {
  std::string method;
  std::uint64_t seed = 0;
  std::optional<RunMetrics> metrics;
  std::optional<double> dev_ter;
  std::optional<double> test_ter;
  std::string error;
};

struct CompareResult {
  ComparisonReport report;
  std::vector<CellResult> cells;
};

using CellCallback = std::function<void(const CellResult&)>;

// Cells that throw are recorded with their error; dependent IT/S, CT/S and
// AT/S cells fail with them when token-level T/S initialization fails.
CompareResult run_compare(const AedModel& teacher, const CorpusSplits& splits, const CompareConfig& config,
                          const CellCallback& on_cell = {});

}  // namespace distill

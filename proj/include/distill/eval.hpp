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

// Token error rate scoring and comparison reports.
//
// TER is the toy-scale stand-in for word error rate: edit distance over
// content tokens only (<sos>, <eos>, <space> and <unk> are stripped from both
// reference and hypothesis), aggregated over a corpus as
// (S + I + D) / reference tokens.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill/aed.hpp"
#include "distill/corpus.hpp"

namespace distill {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  std::size_t total() const { return substitutions + insertions + deletions; }
  bool operator==(const EditCounts&) const = default;
};

// Minimal unit-cost alignment. Among equal-cost alignments the backtrace
// prefers substitution, then insertion, then deletion.
EditCounts edit_distance(std::span<const int> ref, std::span<const int> hyp);

// Which frames of a parallel utterance a model reads.
enum class Side { Source, Target };

const char* side_name(Side side);
Side parse_side(const std::string& name);

struct UtteranceScore {
  std::uint64_t id = 0;
  std::vector<int> ref;
  std::vector<int> hyp;
  EditCounts counts;
  bool hit_max_length = false;
};

struct TerResult {
  double ter = 0.0;
  EditCounts counts;
  std::size_t ref_tokens = 0;
  std::vector<UtteranceScore> utterances;  // in input order
};

// Content tokens of an id sequence.
std::vector<int> strip_specials(const Vocab& vocab, std::span<const int> ids);

// Greedy-decodes every utterance from the chosen side and scores it against
// its labels. Decoding runs in batches of utterances with equal frame counts
// where possible; the result does not depend on input order.
TerResult corpus_ter(const AedModel& model, std::span<const ParallelUtterance> utts, Side side,
                     int max_length, std::size_t batch_size = 64);

// 100 * (baseline - adapted) / baseline, or nullopt when baseline <= 0.
std::optional<double> relative_reduction(double baseline, double adapted);

// One method of a comparison grid. Per-seed entries are nullopt for cells
// that failed.
struct ReportRow {
  std::string method;
  std::vector<std::optional<double>> dev_ters;
  std::vector<std::optional<double>> test_ters;
  std::vector<std::string> errors;  // "" for cells that completed

  std::optional<double> mean_dev_ter() const;
  std::optional<double> mean_test_ter() const;
};

struct CurvePoint {
  std::string method;
  std::uint64_t seed = 0;
  int epoch = 0;
  double dev_ter = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

struct ComparisonReport {
  std::string metric = "TER";
  std::string baseline;  // method name the WERR column is measured against
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;
  std::vector<CurvePoint> curves;

  const ReportRow* find(const std::string& method) const;
  // WERR of `method` on mean test TER against the baseline row.
  std::optional<double> werr(const std::string& method) const;

  nlohmann::json to_json() const;
  static ComparisonReport from_json(const nlohmann::json& j);
};

// Fixed-point with four decimals and a '.' separator regardless of locale.
std::string format_fixed4(double v);

// Writes report.json, report.csv and curves.csv into `dir`.
void emit_report(const ComparisonReport& report, const std::filesystem::path& dir);

}  // namespace distill

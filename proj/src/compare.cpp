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


#include "distill/compare.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <mutex>
#include <thread>

#include "distill/errors.hpp"

namespace distill {
namespace {

std::string short_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void record(ComparisonReport& report, const CellResult& cell, std::size_t seed_index) {
  ReportRow* row = nullptr;
  for (auto& r : report.rows) {
    if (r.method == cell.method) row = &r;
  }
  if (!row) {
    report.rows.push_back({cell.method, {}, {}, {}});
    row = &report.rows.back();
    const std::size_t n = report.seeds.size();
    row->dev_ters.assign(n, std::nullopt);
    row->test_ters.assign(n, std::nullopt);
    row->errors.assign(n, "");
  }
  row->dev_ters[seed_index] = cell.dev_ter;
  row->test_ters[seed_index] = cell.test_ter;
  row->errors[seed_index] = cell.error;
  if (cell.metrics) {
    for (const auto& e : cell.metrics->epochs) report.curves.push_back({cell.method, cell.seed, e.epoch, e.dev_ter});
  }
}

}  // namespace

std::string its_row(double w) { return "its_w" + short_number(w); }
std::string ats_row(double lambda) { return "ats_l" + short_number(lambda); }

CompareConfig::CompareConfig() {
  baseline.mode = TrainMode::CE;
  baseline.side = Side::Target;
  baseline.epochs = 20;
  adaptation.mode = TrainMode::TokenTs;
  adaptation.epochs = 20;
  adaptation.learning_rate = 1e-3;
}

void CompareConfig::validate() const {
  if (seeds.empty()) throw ConfigError("compare: seeds must be nonempty");
  if (workers < 1) throw ConfigError("compare: workers must be at least 1");
  for (double w : its_weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("compare: its_weights must lie in [0, 1]");
  }
  for (double l : lambdas) {
    if (!(l > 0.0)) throw ConfigError("compare: lambdas must be positive");
  }
  if (baseline.mode != TrainMode::CE) throw ConfigError("compare: baseline mode must be CE");
  if (adaptation.mode != TrainMode::TokenTs || adaptation.lambda || adaptation.its_weight) {
    throw ConfigError("compare: adaptation settings must not set mode, lambda or its_weight");
  }
  baseline.validate();
  adaptation.validate();
}

nlohmann::json CompareConfig::to_json() const {
  nlohmann::json adapt = adaptation.to_json();
  adapt.erase("mode");
  adapt.erase("side");
  nlohmann::json base = baseline.to_json();
  base.erase("mode");
  base.erase("side");
  return {{"seeds", seeds}, {"workers", workers}, {"its_weights", its_weights}, {"lambdas", lambdas},
          {"baseline", base}, {"adaptation", adapt}};
}

CompareConfig CompareConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("compare config must be a JSON object");
  CompareConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key != "seeds" && key != "workers" && key != "its_weights" && key != "lambdas" && key != "baseline" &&
          key != "adaptation") {
        throw ConfigError("compare config: unknown key '" + key + "'");
      }
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("workers")) c.workers = j.at("workers").get<int>();
    if (j.contains("its_weights")) c.its_weights = j.at("its_weights").get<std::vector<double>>();
    if (j.contains("lambdas")) c.lambdas = j.at("lambdas").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("compare config: ") + e.what());
  }
  for (const char* key : {"baseline", "adaptation"}) {
    if (!j.contains(key)) continue;
    const auto& sub = j.at(key);
    if (!sub.is_object()) throw ConfigError(std::string("compare: ") + key + " must be an object");
    for (const char* forbidden : {"mode", "side", "lambda", "its_weight"}) {
      if (sub.contains(forbidden)) {
        throw ConfigError(std::string("compare: ") + key + "." + forbidden + " is set by the grid");
      }
    }
  }
  // Sub-objects override the grid defaults key by key.
  if (j.contains("baseline")) {
    nlohmann::json b = c.baseline.to_json();
    b.merge_patch(j.at("baseline"));
    c.baseline = TrainConfig::from_json(b);
  }
  if (j.contains("adaptation")) {
    nlohmann::json a = c.adaptation.to_json();
    a.merge_patch(j.at("adaptation"));
    c.adaptation = TrainConfig::from_json(a);
  }
  c.validate();
  return c;
}

namespace {

// Every cell of one seed, in row order. Shares nothing mutable with other
// seeds, so seeds can run on separate threads.
std::vector<CellResult> run_seed(const AedModel& teacher, const CorpusSplits& splits, const CompareConfig& config,
                                 std::uint64_t seed, const CellCallback& on_cell) {
  const int max_len = config.adaptation.max_decode_length;
  const auto eval_batch = static_cast<std::size_t>(config.adaptation.eval_batch_size);
  std::vector<CellResult> cells;

  auto evaluate = [&](CellResult& cell, const AedModel& model) {
    cell.dev_ter = corpus_ter(model, splits.dev, Side::Target, max_len, eval_batch).ter;
    cell.test_ter = corpus_ter(model, splits.test, Side::Target, max_len, eval_batch).ter;
  };
  auto run_cell = [&](const std::string& method, const std::function<TrainResult()>& body) -> std::optional<AedModel> {
    CellResult cell{method, seed, std::nullopt, std::nullopt, std::nullopt, ""};
    std::optional<AedModel> model;
    try {
      TrainResult r = body();
      evaluate(cell, r.model);
      cell.metrics = std::move(r.metrics);
      model.emplace(std::move(r.model));
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    if (on_cell) on_cell(cell);
    cells.push_back(std::move(cell));
    return model;
  };

  {
    CellResult cell{kTeacherRow, seed, std::nullopt, std::nullopt, std::nullopt, ""};
    try {
      evaluate(cell, teacher);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    if (on_cell) on_cell(cell);
    cells.push_back(std::move(cell));
  }

  TrainConfig ce = config.baseline;
  ce.seed = seed;
  run_cell(kBaselineRow, [&] { return train_ce(teacher, splits.adapt, splits.dev, ce); });

  TrainConfig token = config.adaptation;
  token.seed = seed;
  const AedModel student = clone_student(teacher);
  const UnlabeledParallelView unlabeled(splits.adapt);
  const auto token_model =
      run_cell(kTokenTsRow, [&] { return adapt_token_ts(teacher, student, unlabeled, splits.dev, token); });

  TrainConfig seq = token;
  seq.mode = TrainMode::SeqTs;
  run_cell(kSeqTsRow, [&] { return adapt_seq_ts(teacher, student, unlabeled, splits.dev, seq); });

  auto supervised = [&](const std::string& method, TrainConfig cfg) {
    run_cell(method, [&]() -> TrainResult {
      if (!cfg.token_ts_init) return adapt_supervised(teacher, student, splits.adapt, splits.dev, cfg);
      if (!token_model) throw ContractError("token-level T/S initialization failed");
      return adapt_supervised(teacher, *token_model, splits.adapt, splits.dev, cfg);
    });
  };
  for (double w : config.its_weights) {
    TrainConfig cfg = token;
    cfg.mode = TrainMode::Its;
    cfg.its_weight = w;
    supervised(its_row(w), cfg);
  }
  {
    TrainConfig cfg = token;
    cfg.mode = TrainMode::Cts;
    supervised(kCtsRow, cfg);
  }
  for (double l : config.lambdas) {
    TrainConfig cfg = token;
    cfg.mode = TrainMode::Ats;
    cfg.lambda = l;
    supervised(ats_row(l), cfg);
  }
  return cells;
}

}  // namespace

CompareResult run_compare(const AedModel& teacher, const CorpusSplits& splits, const CompareConfig& config,
                          const CellCallback& on_cell) {
  config.validate();
  const std::size_t n = config.seeds.size();
  std::vector<std::vector<CellResult>> per_seed(n);
  std::mutex callback_mutex;
  const CellCallback guarded = [&](const CellResult& cell) {
    if (!on_cell) return;
    std::lock_guard lock(callback_mutex);
    on_cell(cell);
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      per_seed[i] = run_seed(teacher, splits, config, config.seeds[i], guarded);
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(config.workers), n);
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();

  CompareResult result;
  result.report.baseline = kBaselineRow;
  result.report.seeds = config.seeds;
  for (std::size_t si = 0; si < n; ++si) {
    for (auto& cell : per_seed[si]) {
      record(result.report, cell, si);
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

}  // namespace distill

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


#include "distill/eval.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

#include "distill/checkpoint.hpp"
#include "distill/errors.hpp"

namespace distill {

EditCounts edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = 0; i <= n; ++i) cost[at(i, 0)] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[at(0, j)] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = cost[at(i - 1, j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cost[at(i, j)] = std::min({diag, cost[at(i, j - 1)] + 1, cost[at(i - 1, j)] + 1});
    }
  }

  EditCounts counts;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = cost[at(i, j)];
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (cost[at(i - 1, j - 1)] + (same ? 0 : 1) == here) {
        if (!same) ++counts.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && cost[at(i, j - 1)] + 1 == here) {
      ++counts.insertions;
      --j;
    } else {
      ++counts.deletions;
      --i;
    }
  }
  return counts;
}

const char* side_name(Side side) { return side == Side::Source ? "source" : "target"; }

Side parse_side(const std::string& name) {
  if (name == "source") return Side::Source;
  if (name == "target") return Side::Target;
  throw ConfigError("side must be \"source\" or \"target\", got \"" + name + "\"");
}

std::vector<int> strip_specials(const Vocab& vocab, std::span<const int> ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (!vocab.is_special(id)) out.push_back(id);
  }
  return out;
}

TerResult corpus_ter(const AedModel& model, std::span<const ParallelUtterance> utts, Side side,
                     int max_length, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  std::vector<std::size_t> order(utts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto na = utts[a].source.rows(), nb = utts[b].source.rows();
    return na != nb ? na < nb : utts[a].id < utts[b].id;
  });

  TerResult result;
  result.utterances.resize(utts.size());
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<const Matrix*> frames;
    for (std::size_t k = start; k < end; ++k) {
      const auto& u = utts[order[k]];
      frames.push_back(side == Side::Source ? &u.source : &u.target);
    }
    const auto hyps = greedy_decode(model, FrameBatch::from(frames), max_length);
    for (std::size_t k = start; k < end; ++k) {
      const auto& u = utts[order[k]];
      auto& score = result.utterances[order[k]];
      score.id = u.id;
      score.ref = strip_specials(model.vocab(), u.labels);
      score.hyp = strip_specials(model.vocab(), hyps[k - start].tokens);
      score.hit_max_length = hyps[k - start].hit_max_length;
      score.counts = edit_distance(score.ref, score.hyp);
    }
  }

  for (const auto& score : result.utterances) {
    result.counts.substitutions += score.counts.substitutions;
    result.counts.insertions += score.counts.insertions;
    result.counts.deletions += score.counts.deletions;
    result.ref_tokens += score.ref.size();
  }
  if (result.ref_tokens == 0) throw ContractError("corpus_ter: references contain no content tokens");
  result.ter = static_cast<double>(result.counts.total()) / static_cast<double>(result.ref_tokens);
  return result;
}

std::optional<double> relative_reduction(double baseline, double adapted) {
  if (!(baseline > 0.0)) return std::nullopt;
  return 100.0 * (baseline - adapted) / baseline;
}

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string csv_cell(const std::optional<double>& v) { return v ? format_fixed4(*v) : "NA"; }

std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::optional<double> ReportRow::mean_dev_ter() const { return mean_of(dev_ters); }
std::optional<double> ReportRow::mean_test_ter() const { return mean_of(test_ters); }

const ReportRow* ComparisonReport::find(const std::string& method) const {
  for (const auto& row : rows) {
    if (row.method == method) return &row;
  }
  return nullptr;
}

std::optional<double> ComparisonReport::werr(const std::string& method) const {
  const ReportRow* base = find(baseline);
  const ReportRow* row = find(method);
  if (!base || !row) return std::nullopt;
  const auto b = base->mean_test_ter();
  const auto a = row->mean_test_ter();
  if (!b || !a) return std::nullopt;
  return relative_reduction(*b, *a);
}

nlohmann::json ComparisonReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json dev = nlohmann::json::array(), test = nlohmann::json::array();
    for (const auto& v : row.dev_ters) dev.push_back(optional_json(v));
    for (const auto& v : row.test_ters) test.push_back(optional_json(v));
    rows_json.push_back({{"method", row.method},
                         {"dev_ters", dev},
                         {"test_ters", test},
                         {"errors", row.errors},
                         {"mean_dev_ter", optional_json(row.mean_dev_ter())},
                         {"mean_test_ter", optional_json(row.mean_test_ter())},
                         {"werr_pct", optional_json(werr(row.method))}});
  }
  nlohmann::json curves_json = nlohmann::json::array();
  for (const auto& c : curves) {
    curves_json.push_back({{"method", c.method}, {"seed", c.seed}, {"epoch", c.epoch}, {"dev_ter", c.dev_ter}});
  }
  return {{"format", "distill-report"}, {"version", 1},       {"metric", metric},
          {"baseline", baseline},       {"seeds", seeds},     {"rows", rows_json},
          {"curves", curves_json}};
}

ComparisonReport ComparisonReport::from_json(const nlohmann::json& j) {
  try {
    ComparisonReport r;
    r.metric = j.at("metric").get<std::string>();
    r.baseline = j.at("baseline").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& row_json : j.at("rows")) {
      ReportRow row;
      row.method = row_json.at("method").get<std::string>();
      for (const auto& v : row_json.at("dev_ters")) row.dev_ters.push_back(optional_from(v));
      for (const auto& v : row_json.at("test_ters")) row.test_ters.push_back(optional_from(v));
      row.errors = row_json.at("errors").get<std::vector<std::string>>();
      r.rows.push_back(std::move(row));
    }
    for (const auto& c : j.at("curves")) {
      r.curves.push_back({c.at("method").get<std::string>(), c.at("seed").get<std::uint64_t>(),
                          c.at("epoch").get<int>(), c.at("dev_ter").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed report: ") + e.what());
  }
}

std::string format_fixed4(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 4);
  if (res.ec != std::errc()) throw ContractError("format_fixed4: value does not fit");
  return std::string(buf, res.ptr);
}

void emit_report(const ComparisonReport& report, const std::filesystem::path& dir) {
  write_file(dir / "report.json", report.to_json().dump(2) + "\n");

  std::ostringstream csv;
  csv << "method,seed,dev_ter,test_ter,werr_pct\n";
  for (const auto& row : report.rows) {
    for (std::size_t s = 0; s < row.dev_ters.size(); ++s) {
      const std::string seed = s < report.seeds.size() ? std::to_string(report.seeds[s]) : std::to_string(s);
      std::optional<double> test;
      if (s < row.test_ters.size()) test = row.test_ters[s];
      csv << csv_text(row.method) << ',' << seed << ',' << csv_cell(row.dev_ters[s]) << ',' << csv_cell(test)
          << ",NA\n";
    }
    csv << csv_text(row.method) << ",mean," << csv_cell(row.mean_dev_ter()) << ','
        << csv_cell(row.mean_test_ter()) << ',' << csv_cell(report.werr(row.method)) << '\n';
  }
  write_file(dir / "report.csv", csv.str());

  std::ostringstream curves;
  curves << "method,seed,epoch,dev_ter\n";
  for (const auto& c : report.curves) {
    curves << csv_text(c.method) << ',' << c.seed << ',' << c.epoch << ',' << format_fixed4(c.dev_ter) << '\n';
  }
  write_file(dir / "curves.csv", curves.str());
}

}  // namespace distill
